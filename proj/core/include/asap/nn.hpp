#pragma once

// Neural building blocks shared by the turn-level and score-level encoders.

#include <cstddef>
#include <string>
#include <vector>

#include "asap/tensor.hpp"

namespace asap {

/// One learnable tensor with its checkpoint name.
struct NamedParameter {
    std::string name;
    Tensor tensor;
    /// Whether decoupled weight decay applies (false for biases, norms, score embeddings).
    bool decay = true;
};

/// Ordered registry of named parameters. Registration order fixes init order.
class ParameterStore {
public:
    /// Uniform(-bound, bound) initialisation.
    Tensor add_uniform(const std::string& name, Shape shape, double bound, Rng& rng, bool decay = true);
    Tensor add_constant(const std::string& name, Shape shape, double value, bool decay = false);
    /// Registers an existing tensor (used when loading checkpoints).
    Tensor add(const std::string& name, Tensor tensor, bool decay);

    const std::vector<NamedParameter>& entries() const { return entries_; }
    std::vector<NamedParameter>& entries() { return entries_; }
    const NamedParameter* find(const std::string& name) const;
    const Tensor& get(const std::string& name) const;
    std::size_t size() const { return entries_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    void append(const ParameterStore& other);

private:
    std::vector<NamedParameter> entries_;
};

/// Flags controlling stochastic behaviour during a forward pass.
struct ForwardContext {
    bool train = false;
    Rng* rng = nullptr;
};

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t num_heads = 4;
    std::size_t num_layers = 2;
    std::size_t ffn_dim = 256;
    double dropout = 0.1;

    /// Throws ConfigError on invalid values.
    void validate() const;
};

/// Sinusoidal encoding of a 1-based position.
std::vector<double> positional_encoding(std::size_t position, std::size_t d);
/// Rows pe(1)..pe(t) as a constant [t x d] tensor.
Tensor positional_encodings(std::size_t t, std::size_t d);

class Linear {
public:
    Linear() = default;
    Linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

    Tensor forward(const Tensor& x) const;

    Tensor weight;  // [in x out]
    Tensor bias;    // [out]
};

/// Linear -> ReLU -> dropout -> Linear.
class MlpHead {
public:
    MlpHead() = default;
    MlpHead(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden,
            std::size_t out, double dropout, Rng& rng);

    Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

    Linear hidden;
    Linear output;
    double dropout = 0.0;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterStore& store, const std::string& prefix, std::size_t d);

    Tensor forward(const Tensor& x) const;

    Tensor gain;
    Tensor bias;
};

/// Multi-head self-attention where row i attends to rows 0..i only.
class MaskedMultiHeadAttention {
public:
    MaskedMultiHeadAttention() = default;
    MaskedMultiHeadAttention(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg,
                             Rng& rng);

    Tensor forward(const Tensor& x, const ForwardContext& ctx) const;

    Linear query;
    Linear key;
    Linear value;
    Linear output;
    std::size_t num_heads = 1;
    double dropout = 0.0;
};

class FeedForward {
public:
    FeedForward() = default;
    FeedForward(ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t inner, Rng& rng);

    Tensor forward(const Tensor& x) const;

    Linear expand;
    Linear project;
};

/// One post-norm layer:
///   S   = LN1(MultiHead(H) + H)
///   out = LN2(FFN(S) + S)
/// i.e. FFN(H* + H) + H* + H with a norm after each residual sum.
class EncoderLayer {
public:
    EncoderLayer() = default;
    EncoderLayer(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

    Tensor forward(const Tensor& h, const ForwardContext& ctx) const;

    MaskedMultiHeadAttention attention;
    FeedForward ffn;
    LayerNorm norm1;
    LayerNorm norm2;
    double dropout = 0.0;
};

/// Unidirectional Transformer encoder over a sequence of turn rows.
class CausalEncoder {
public:
    CausalEncoder() = default;
    CausalEncoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng);

    /// rows: [t x d]; adds pe(1..t) and applies every layer. ContractError when t == 0.
    Tensor encode(const Tensor& rows, const ForwardContext& ctx) const;

    const EncoderConfig& config() const { return cfg_; }
    std::vector<EncoderLayer> layers;

private:
    EncoderConfig cfg_;
};

}  // namespace asap
