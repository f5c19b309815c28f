#include "asap/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "asap/errors.hpp"

namespace asap {

namespace {

std::atomic<std::uint64_t> next_node_id{1};

thread_local std::string fault_op;
thread_local double fault_factor = 1.0;

using NodePtr = std::shared_ptr<detail::Node>;

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad, const char* op) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
    node->op = op;
    return node;
}

std::vector<double>& grad_of(detail::Node& node) {
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
    return std::any_of(inputs.begin(), inputs.end(),
                       [](const Tensor* t) { return t->requires_grad(); });
}

// Builds the result node. Graph edges are only recorded when some input needs gradients.
Tensor make_result(Shape shape, std::vector<double> value, const char* op,
                   std::vector<NodePtr> inputs, std::function<void(detail::Node&)> bw) {
    const bool track = std::any_of(inputs.begin(), inputs.end(),
                                   [](const NodePtr& n) { return n->requires_grad; });
    auto node = new_node(std::move(shape), std::move(value), track, op);
    if (track) {
        node->inputs = std::move(inputs);
        node->backward = std::move(bw);
    }
    return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

void require_rank2(const Tensor& t, const char* op) {
    require_defined(t, op);
    if (t.rank() != 2)
        throw DimensionError(std::string(op) + ": expected rank-2 tensor, got " +
                             shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require_defined(a, op);
    require_defined(b, op);
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
}

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
    const int r = static_cast<int>(rank);
    const int a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r)
        throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                             " out of range for rank " + std::to_string(rank));
    return static_cast<std::size_t>(a);
}

// Generic unary elementwise op: value from f, derivative from df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, const char* op, F f, DF df) {
    require_defined(x, op);
    const auto in = x.values();
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return make_result(x.shape(), std::move(out), op, {x.node()}, [df](detail::Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        auto& g = grad_of(src);
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * df(src.value[i], self.value[i]);
    });
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    const auto n = shape_numel(shape);
    return Tensor(new_node(std::move(shape), std::vector<double>(n, value), requires_grad, "leaf"));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("tensor dimensions must be positive: " + shape_string(shape));
    if (shape_numel(shape) != values.size())
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_string(shape));
    return Tensor(new_node(std::move(shape), std::move(values), requires_grad, "leaf"));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

Tensor Tensor::matrix(const std::vector<std::vector<double>>& rows, bool requires_grad) {
    if (rows.empty() || rows.front().empty()) throw DimensionError("matrix: empty rows");
    const auto cols = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw DimensionError("matrix: ragged rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return from({rows.size(), cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    require_defined(*this, "shape");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) throw DimensionError("dim: axis out of range");
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::values() const {
    require_defined(*this, "values");
    return node_->value;
}

std::span<double> Tensor::mutable_values() {
    require_defined(*this, "mutable_values");
    return node_->value;
}

std::span<const double> Tensor::grad() const {
    require_defined(*this, "grad");
    return grad_of(*node_);
}

std::span<double> Tensor::mutable_grad() {
    require_defined(*this, "mutable_grad");
    return grad_of(*node_);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_string(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t i) const {
    const auto v = values();
    if (i >= v.size()) throw DimensionError("at: index out of range");
    return v[i];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw DimensionError("at(row, col) on non-matrix");
    if (row >= node_->shape[0] || col >= node_->shape[1]) throw DimensionError("at: index out of range");
    return node_->value[row * node_->shape[1] + col];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool flag) {
    require_defined(*this, "set_requires_grad");
    node_->requires_grad = flag;
}

void Tensor::zero_grad() {
    require_defined(*this, "zero_grad");
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

std::uint64_t Tensor::node_id() const { return node_ ? node_->id : 0; }

const char* Tensor::op_name() const { return node_ ? node_->op : "undefined"; }

Tensor Tensor::detach() const {
    require_defined(*this, "detach");
    return Tensor(new_node(node_->shape, node_->value, false, "leaf"));
}

// ---------------------------------------------------------------------------
// Backward

void backward(const Tensor& loss) {
    require_defined(loss, "backward");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order (inputs before outputs).
    std::vector<detail::Node*> order;
    std::unordered_set<const detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior grads restart from zero so a repeated call on the same graph
    // adds exactly one more dLoss/dLeaf to the leaves.
    for (auto* node : order)
        if (node->backward) grad_of(*node).assign(node->value.size(), 0.0);
    grad_of(*loss.node())[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (!node->backward) continue;
        if (!fault_op.empty() && fault_op == node->op)
            for (auto& g : node->grad) g *= fault_factor;
        node->backward(*node);
    }
}

namespace testing {

void set_backward_fault(std::string op, double factor) {
    fault_op = std::move(op);
    fault_factor = factor;
}

void clear_backward_fault() {
    fault_op.clear();
    fault_factor = 1.0;
}

}  // namespace testing

// ---------------------------------------------------------------------------
// Ops

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                             shape_string(b.shape()));
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    return make_result({m, n}, std::move(out), "matmul", {a.node(), b.node()},
                       [m, k, n](detail::Node& self) {
                           auto& A = *self.inputs[0];
                           auto& B = *self.inputs[1];
                           const double* dc = self.grad.data();
                           if (A.requires_grad) {
                               auto& da = grad_of(A);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       const double* brow = B.value.data() + p * n;
                                       const double* drow = dc + i * n;
                                       double acc = 0.0;
                                       for (std::size_t j = 0; j < n; ++j) acc += drow[j] * brow[j];
                                       da[i * k + p] += acc;
                                   }
                           }
                           if (B.requires_grad) {
                               auto& db = grad_of(B);
                               for (std::size_t i = 0; i < m; ++i)
                                   for (std::size_t p = 0; p < k; ++p) {
                                       const double aip = A.value[i * k + p];
                                       if (aip == 0.0) continue;
                                       const double* drow = dc + i * n;
                                       double* dbrow = db.data() + p * n;
                                       for (std::size_t j = 0; j < n; ++j) dbrow[j] += aip * drow[j];
                                   }
                           }
                       });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    if (a.shape() == b.shape()) {
        const auto av = a.values();
        const auto bv = b.values();
        std::vector<double> out(av.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [](detail::Node& self) {
            for (auto& in : self.inputs) {
                if (!in->requires_grad) continue;
                auto& g = grad_of(*in);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            }
        });
    }
    // Row broadcast: b is rank-1 matching the last axis of a.
    if (b.rank() != 1 || a.rank() < 1 || a.shape().back() != b.dim(0))
        throw DimensionError("add: cannot broadcast " + shape_string(b.shape()) + " onto " +
                             shape_string(a.shape()));
    const std::size_t n = b.dim(0);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i % n];
    return make_result(a.shape(), std::move(out), "add", {a.node(), b.node()}, [n](detail::Node& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        if (A.requires_grad) {
            auto& g = grad_of(A);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = grad_of(B);
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(out), "sub", {a.node(), b.node()}, [](detail::Node& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        if (A.requires_grad) {
            auto& g = grad_of(A);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (B.requires_grad) {
            auto& g = grad_of(B);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(out), "mul", {a.node(), b.node()}, [](detail::Node& self) {
        auto& A = *self.inputs[0];
        auto& B = *self.inputs[1];
        if (A.requires_grad) {
            auto& g = grad_of(A);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
        }
        if (B.requires_grad) {
            auto& g = grad_of(B);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    return unary(a, "scale", [factor](double x) { return x * factor; },
                 [factor](double, double) { return factor; });
}

Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
                 [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& x, double beta) {
    if (!(beta > 0.0)) throw ContractError("softplus: beta must be positive");
    return unary(
        x, "softplus",
        [beta](double v) {
            const double y = v / beta;
            return y > 0.0 ? beta * (y + std::log1p(std::exp(-y))) : beta * std::log1p(std::exp(y));
        },
        [beta](double v, double) {
            const double y = v / beta;
            if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
            const double e = std::exp(y);
            return e / (1.0 + e);
        });
}

Tensor log(const Tensor& x) {
    return unary(x, "log", [](double v) { return std::log(v); },
                 [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); },
                 [](double, double y) { return y; });
}

Tensor softmax(const Tensor& x, int axis) {
    require_defined(x, "softmax");
    if (x.rank() == 0) throw DimensionError("softmax: scalar input");
    const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
    const auto& shape = x.shape();
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < ax; ++i) outer *= shape[i];
    for (std::size_t i = ax + 1; i < shape.size(); ++i) inner *= shape[i];
    const std::size_t n = shape[ax];
    const auto in = x.values();
    std::vector<double> out(in.size());
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t q = 0; q < inner; ++q) {
            const std::size_t base = o * n * inner + q;
            double mx = in[base];
            for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[base + j * inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double e = std::exp(in[base + j * inner] - mx);
                out[base + j * inner] = e;
                total += e;
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
        }
    return make_result(shape, std::move(out), "softmax", {x.node()},
                       [outer, inner, n](detail::Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad) return;
                           auto& g = grad_of(src);
                           for (std::size_t o = 0; o < outer; ++o)
                               for (std::size_t q = 0; q < inner; ++q) {
                                   const std::size_t base = o * n * inner + q;
                                   double dot = 0.0;
                                   for (std::size_t j = 0; j < n; ++j)
                                       dot += self.grad[base + j * inner] * self.value[base + j * inner];
                                   for (std::size_t j = 0; j < n; ++j) {
                                       const std::size_t idx = base + j * inner;
                                       g[idx] += self.value[idx] * (self.grad[idx] - dot);
                                   }
                               }
                       });
}

Tensor causal_softmax(const Tensor& scores) {
    require_rank2(scores, "causal_softmax");
    const std::size_t t = scores.dim(0);
    if (scores.dim(1) != t) throw DimensionError("causal_softmax: scores must be square");
    const auto in = scores.values();
    std::vector<double> out(t * t, 0.0);
    for (std::size_t i = 0; i < t; ++i) {
        const double* row = in.data() + i * t;
        double mx = row[0];
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        double total = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            out[i * t + j] = std::exp(row[j] - mx);
            total += out[i * t + j];
        }
        for (std::size_t j = 0; j <= i; ++j) out[i * t + j] /= total;
    }
    return make_result({t, t}, std::move(out), "causal_softmax", {scores.node()}, [t](detail::Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        auto& g = grad_of(src);
        for (std::size_t i = 0; i < t; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) dot += self.grad[i * t + j] * self.value[i * t + j];
            for (std::size_t j = 0; j <= i; ++j)
                g[i * t + j] += self.value[i * t + j] * (self.grad[i * t + j] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_defined(x, "layer_norm");
    if (x.rank() < 1) throw DimensionError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw DimensionError("layer_norm: gain/bias must be rank-1 of size " + std::to_string(d));
    const std::size_t rows = x.numel() / d;
    const auto in = x.values();
    const auto gv = gain.values();
    const auto bv = bias.values();
    std::vector<double> out(in.size());
    std::vector<double> xhat(in.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (row[j] - mu) * inv_std[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_result(
        x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
        [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
            auto& X = *self.inputs[0];
            auto& G = *self.inputs[1];
            auto& B = *self.inputs[2];
            const double* dy = self.grad.data();
            if (G.requires_grad) {
                auto& g = grad_of(G);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j] * xhat[r * d + j];
            }
            if (B.requires_grad) {
                auto& g = grad_of(B);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) g[j] += dy[r * d + j];
            }
            if (X.requires_grad) {
                auto& g = grad_of(X);
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[r * d + j] * G.value[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = dy[r * d + j] * G.value[j];
                        g[r * d + j] += inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
}

Tensor dropout(const Tensor& x, double p, bool train, Rng* rng) {
    require_defined(x, "dropout");
    if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    if (!rng) throw ContractError("dropout: training mode requires an rng");
    std::bernoulli_distribution keep(1.0 - p);
    const double factor = 1.0 / (1.0 - p);
    const auto in = x.values();
    std::vector<double> mask(in.size());
    std::vector<double> out(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
        mask[i] = keep(*rng) ? factor : 0.0;
        out[i] = in[i] * mask[i];
    }
    return make_result(x.shape(), std::move(out), "dropout", {x.node()},
                       [mask = std::move(mask)](detail::Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad) return;
                           auto& g = grad_of(src);
                           for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
                       });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    for (const auto& p : parts) require_rank2(p, "concat");
    const std::size_t ax = normalize_axis(axis, 2, "concat");
    const std::size_t fixed = parts.front().dim(1 - ax);
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.dim(1 - ax) != fixed)
            throw DimensionError("concat: mismatched extent " + shape_string(p.shape()));
        total += p.dim(ax);
    }
    const Shape shape = ax == 0 ? Shape{total, fixed} : Shape{fixed, total};
    std::vector<double> out(total * fixed);
    std::vector<NodePtr> inputs;
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto v = p.values();
        const std::size_t len = p.dim(ax);
        if (ax == 0) {
            std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(offset * fixed));
        } else {
            for (std::size_t r = 0; r < fixed; ++r)
                std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * len), len,
                            out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
        }
        offsets.push_back(offset);
        inputs.push_back(p.node());
        offset += len;
    }
    return make_result(shape, std::move(out), "concat", std::move(inputs),
                       [ax, fixed, total, offsets = std::move(offsets)](detail::Node& self) {
                           for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                               auto& in = *self.inputs[k];
                               if (!in.requires_grad) continue;
                               auto& g = grad_of(in);
                               const std::size_t len = in.shape[ax];
                               if (ax == 0) {
                                   const double* src = self.grad.data() + offsets[k] * fixed;
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += src[i];
                               } else {
                                   for (std::size_t r = 0; r < fixed; ++r)
                                       for (std::size_t c = 0; c < len; ++c)
                                           g[r * len + c] += self.grad[r * total + offsets[k] + c];
                               }
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
    require_rank2(x, "slice");
    const std::size_t ax = normalize_axis(axis, 2, "slice");
    if (length == 0 || start + length > x.dim(ax))
        throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                             std::to_string(start + length) + ") outside " + shape_string(x.shape()));
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto in = x.values();
    Shape shape = ax == 0 ? Shape{length, cols} : Shape{rows, length};
    std::vector<double> out(shape_numel(shape));
    if (ax == 0) {
        std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(start * cols), length * cols, out.begin());
    } else {
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(in.begin() + static_cast<std::ptrdiff_t>(r * cols + start), length,
                        out.begin() + static_cast<std::ptrdiff_t>(r * length));
    }
    return make_result(std::move(shape), std::move(out), "slice", {x.node()},
                       [ax, start, length, rows, cols](detail::Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad) return;
                           auto& g = grad_of(src);
                           if (ax == 0) {
                               for (std::size_t i = 0; i < length * cols; ++i)
                                   g[start * cols + i] += self.grad[i];
                           } else {
                               for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < length; ++c)
                                       g[r * cols + start + c] += self.grad[r * length + c];
                           }
                       });
}

Tensor transpose(const Tensor& x) {
    require_rank2(x, "transpose");
    const std::size_t rows = x.dim(0), cols = x.dim(1);
    const auto in = x.values();
    std::vector<double> out(in.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
    return make_result({cols, rows}, std::move(out), "transpose", {x.node()},
                       [rows, cols](detail::Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad) return;
                           auto& g = grad_of(src);
                           for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cols; ++c)
                                   g[r * cols + c] += self.grad[c * rows + r];
                       });
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    const auto in = x.values();
    const double total = std::accumulate(in.begin(), in.end(), 0.0);
    return make_result({}, {total}, "sum", {x.node()}, [](detail::Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        auto& g = grad_of(src);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    const auto in = x.values();
    const double n = static_cast<double>(in.size());
    const double total = std::accumulate(in.begin(), in.end(), 0.0);
    return make_result({}, {total / n}, "mean", {x.node()}, [n](detail::Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        auto& g = grad_of(src);
        for (auto& v : g) v += self.grad[0] / n;
    });
}

Tensor embedding_bag(const Tensor& table, const std::vector<std::vector<std::size_t>>& bags) {
    require_rank2(table, "embedding_bag");
    if (bags.empty()) throw ContractError("embedding_bag: no bags");
    const std::size_t vocab = table.dim(0), d = table.dim(1);
    const auto tv = table.values();
    std::vector<double> out(bags.size() * d, 0.0);
    for (std::size_t b = 0; b < bags.size(); ++b) {
        if (bags[b].empty()) continue;
        const double w = 1.0 / static_cast<double>(bags[b].size());
        for (auto idx : bags[b]) {
            if (idx >= vocab) throw DimensionError("embedding_bag: index out of range");
            for (std::size_t j = 0; j < d; ++j) out[b * d + j] += w * tv[idx * d + j];
        }
    }
    return make_result({bags.size(), d}, std::move(out), "embedding_bag", {table.node()},
                       [bags, d](detail::Node& self) {
                           auto& src = *self.inputs[0];
                           if (!src.requires_grad) return;
                           auto& g = grad_of(src);
                           for (std::size_t b = 0; b < bags.size(); ++b) {
                               if (bags[b].empty()) continue;
                               const double w = 1.0 / static_cast<double>(bags[b].size());
                               for (auto idx : bags[b])
                                   for (std::size_t j = 0; j < d; ++j)
                                       g[idx * d + j] += w * self.grad[b * d + j];
                           }
                       });
}

Tensor nll(const Tensor& probs, const std::vector<std::optional<std::size_t>>& targets) {
    require_rank2(probs, "nll");
    const std::size_t rows = probs.dim(0), k = probs.dim(1);
    if (targets.size() != rows)
        throw DimensionError("nll: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(rows) + " rows");
    const auto pv = probs.values();
    std::size_t count = 0;
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!targets[r]) continue;
        if (*targets[r] >= k) throw ContractError("nll: target index out of range");
        total -= std::log(pv[r * k + *targets[r]]);
        ++count;
    }
    if (count == 0) throw ContractError("nll: no supervised rows");
    const double n = static_cast<double>(count);
    return make_result({}, {total / n}, "nll", {probs.node()}, [targets, k, n](detail::Node& self) {
        auto& src = *self.inputs[0];
        if (!src.requires_grad) return;
        auto& g = grad_of(src);
        for (std::size_t r = 0; r < targets.size(); ++r) {
            if (!targets[r]) continue;
            const std::size_t idx = r * k + *targets[r];
            g[idx] -= self.grad[0] / (n * src.value[idx]);
        }
    });
}

}  // namespace asap
