#pragma once

// Dense row-major tensors with define-by-run reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Every op builds a new
// node; when any input requires gradients, the node remembers its inputs and
// a backward closure. Calling backward() on a scalar walks the graph in
// reverse topological order and accumulates into the grads of leaf tensors.
//
// Values are float64. Graphs are confined to a single thread; tensors that do
// not require gradients carry no graph edges and may be shared read-only.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace asap {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    /// Row-major 2-D tensor from nested rows. All rows must have equal length.
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Mutable access for leaves (parameter updates, finite differences).
    std::span<double> mutable_values();
    std::span<const double> grad() const;
    std::span<double> mutable_grad();

    double item() const;
    double at(std::size_t i) const;
    double at(std::size_t row, std::size_t col) const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    void zero_grad();
    std::uint64_t node_id() const;
    const char* op_name() const;

    /// A new leaf holding a copy of the values, disconnected from the graph.
    Tensor detach() const;

    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Populates grads of every requires-grad tensor reachable from `loss`.
/// Leaf grads accumulate across calls; throws ContractError when loss is not a scalar.
void backward(const Tensor& loss);

// Linear algebra and elementwise ops. Binary elementwise ops require equal
// shapes; add() also accepts a rank-1 right operand broadcast along the last axis.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor relu(const Tensor& x);
/// beta * log(1 + exp(x / beta)), evaluated without overflow.
Tensor softplus(const Tensor& x, double beta = 1.0);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
/// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);
/// Row-wise softmax of a square score matrix where row i only sees columns 0..i.
/// Masked entries are exactly zero in the output.
Tensor causal_softmax(const Tensor& scores);
/// Normalizes each row over the last axis, then applies gain and bias (both rank-1).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Inverted dropout. Identity when `train` is false or p == 0.
Tensor dropout(const Tensor& x, double p, bool train, Rng* rng);
/// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Rank-2 slice [start, start+length) along axis 0 or 1.
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
Tensor transpose(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Mean-pooled rows of `table` for each bag of indices; an empty bag yields a zero row.
Tensor embedding_bag(const Tensor& table, const std::vector<std::vector<std::size_t>>& bags);
/// Mean over rows with a target of -log(probs[row, target]). ContractError when no row has a target.
Tensor nll(const Tensor& probs, const std::vector<std::optional<std::size_t>>& targets);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

namespace testing {

/// Multiplies the upstream gradient entering every node of kind `op` by `factor`
/// during backward on this thread. Used to prove the gradient checker catches
/// broken derivatives.
void set_backward_fault(std::string op, double factor);
void clear_backward_fault();

class ScopedBackwardFault {
public:
    ScopedBackwardFault(std::string op, double factor) { set_backward_fault(std::move(op), factor); }
    ~ScopedBackwardFault() { clear_backward_fault(); }
    ScopedBackwardFault(const ScopedBackwardFault&) = delete;
    ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;
};

}  // namespace testing

}  // namespace asap
