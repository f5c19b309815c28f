#include "asap/nn.hpp"

#include <algorithm>
#include <cmath>

#include "asap/errors.hpp"

namespace asap {

// ---------------------------------------------------------------------------
// ParameterStore

Tensor ParameterStore::add_uniform(const std::string& name, Shape shape, double bound, Rng& rng, bool decay) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = dist(rng);
    return add(name, Tensor::from(std::move(shape), std::move(values), true), decay);
}

Tensor ParameterStore::add_constant(const std::string& name, Shape shape, double value, bool decay) {
    return add(name, Tensor::full(std::move(shape), value, true), decay);
}

Tensor ParameterStore::add(const std::string& name, Tensor tensor, bool decay) {
    if (find(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(true);
    entries_.push_back({name, tensor, decay});
    return tensor;
}

const NamedParameter* ParameterStore::find(const std::string& name) const {
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const NamedParameter& p) { return p.name == name; });
    return it == entries_.end() ? nullptr : &*it;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    const auto* p = find(name);
    if (!p) throw LookupError("no parameter named '" + name + "'");
    return p->tensor;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.tensor.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : entries_) p.tensor.zero_grad();
}

void ParameterStore::append(const ParameterStore& other) {
    for (const auto& p : other.entries_) {
        if (find(p.name)) throw ConfigError("duplicate parameter name '" + p.name + "'");
        entries_.push_back(p);
    }
}

// ---------------------------------------------------------------------------
// Config and positional encodings

void EncoderConfig::validate() const {
    if (d_model == 0 || num_heads == 0 || num_layers == 0 || ffn_dim == 0)
        throw ConfigError("encoder dimensions must be >= 1");
    if (d_model % num_heads != 0)
        throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                          std::to_string(num_heads));
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::vector<double> positional_encoding(std::size_t position, std::size_t d) {
    if (position == 0) throw ContractError("positional_encoding: positions are 1-based");
    std::vector<double> pe(d);
    const double pos = static_cast<double>(position);
    for (std::size_t i = 0; 2 * i < d; ++i) {
        const double angle = pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
        pe[2 * i] = std::sin(angle);
        if (2 * i + 1 < d) pe[2 * i + 1] = std::cos(angle);
    }
    return pe;
}

Tensor positional_encodings(std::size_t t, std::size_t d) {
    std::vector<double> values;
    values.reserve(t * d);
    for (std::size_t p = 1; p <= t; ++p) {
        const auto row = positional_encoding(p, d);
        values.insert(values.end(), row.begin(), row.end());
    }
    return Tensor::from({t, d}, std::move(values));
}

// ---------------------------------------------------------------------------
// Layers

Linear::Linear(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight = store.add_uniform(prefix + ".weight", {in, out}, bound, rng, true);
    bias = store.add_uniform(prefix + ".bias", {out}, bound, rng, false);
}

Tensor Linear::forward(const Tensor& x) const { return add(matmul(x, weight), bias); }

MlpHead::MlpHead(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden_dim,
                 std::size_t out, double p, Rng& rng)
    : hidden(store, prefix + ".hidden", in, hidden_dim, rng),
      output(store, prefix + ".output", hidden_dim, out, rng),
      dropout(p) {}

Tensor MlpHead::forward(const Tensor& x, const ForwardContext& ctx) const {
    return output.forward(asap::dropout(relu(hidden.forward(x)), dropout, ctx.train, ctx.rng));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& prefix, std::size_t d) {
    gain = store.add_constant(prefix + ".gain", {d}, 1.0, false);
    bias = store.add_constant(prefix + ".bias", {d}, 0.0, false);
}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias); }

MaskedMultiHeadAttention::MaskedMultiHeadAttention(ParameterStore& store, const std::string& prefix,
                                                   const EncoderConfig& cfg, Rng& rng)
    : query(store, prefix + ".query", cfg.d_model, cfg.d_model, rng),
      key(store, prefix + ".key", cfg.d_model, cfg.d_model, rng),
      value(store, prefix + ".value", cfg.d_model, cfg.d_model, rng),
      output(store, prefix + ".output", cfg.d_model, cfg.d_model, rng),
      num_heads(cfg.num_heads),
      dropout(cfg.dropout) {
    cfg.validate();
}

Tensor MaskedMultiHeadAttention::forward(const Tensor& x, const ForwardContext& ctx) const {
    if (x.rank() != 2) throw DimensionError("attention: expected [t x d] input");
    const std::size_t d = x.dim(1);
    if (d % num_heads != 0) throw ConfigError("attention: d not divisible by heads");
    const std::size_t head_dim = d / num_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

    const Tensor q = query.forward(x);
    const Tensor k = key.forward(x);
    const Tensor v = value.forward(x);
    std::vector<Tensor> heads;
    heads.reserve(num_heads);
    for (std::size_t h = 0; h < num_heads; ++h) {
        const std::size_t off = h * head_dim;
        const Tensor qh = num_heads == 1 ? q : slice(q, 1, off, head_dim);
        const Tensor kh = num_heads == 1 ? k : slice(k, 1, off, head_dim);
        const Tensor vh = num_heads == 1 ? v : slice(v, 1, off, head_dim);
        Tensor weights = causal_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt));
        weights = asap::dropout(weights, dropout, ctx.train, ctx.rng);
        heads.push_back(matmul(weights, vh));
    }
    const Tensor merged = num_heads == 1 ? heads.front() : concat(heads, 1);
    return output.forward(merged);
}

FeedForward::FeedForward(ParameterStore& store, const std::string& prefix, std::size_t d, std::size_t inner,
                         Rng& rng)
    : expand(store, prefix + ".expand", d, inner, rng), project(store, prefix + ".project", inner, d, rng) {}

Tensor FeedForward::forward(const Tensor& x) const { return project.forward(relu(expand.forward(x))); }

EncoderLayer::EncoderLayer(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : attention(store, prefix + ".attention", cfg, rng),
      ffn(store, prefix + ".ffn", cfg.d_model, cfg.ffn_dim, rng),
      norm1(store, prefix + ".norm1", cfg.d_model),
      norm2(store, prefix + ".norm2", cfg.d_model),
      dropout(cfg.dropout) {}

Tensor EncoderLayer::forward(const Tensor& h, const ForwardContext& ctx) const {
    const Tensor attended = asap::dropout(attention.forward(h, ctx), dropout, ctx.train, ctx.rng);
    const Tensor mixed = norm1.forward(add(attended, h));
    const Tensor transformed = asap::dropout(ffn.forward(mixed), dropout, ctx.train, ctx.rng);
    return norm2.forward(add(transformed, mixed));
}

CausalEncoder::CausalEncoder(ParameterStore& store, const std::string& prefix, const EncoderConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    cfg.validate();
    layers.reserve(cfg.num_layers);
    for (std::size_t l = 0; l < cfg.num_layers; ++l)
        layers.emplace_back(store, prefix + ".layer" + std::to_string(l), cfg, rng);
}

Tensor CausalEncoder::encode(const Tensor& rows, const ForwardContext& ctx) const {
    if (!rows.defined() || rows.rank() != 2 || rows.dim(0) == 0)
        throw ContractError("encode_sequence: need at least one row");
    if (rows.dim(1) != cfg_.d_model)
        throw DimensionError("encode_sequence: row width " + std::to_string(rows.dim(1)) +
                             " != d_model " + std::to_string(cfg_.d_model));
    Tensor h = add(rows, positional_encodings(rows.dim(0), cfg_.d_model));
    for (const auto& layer : layers) h = layer.forward(h, ctx);
    return h;
}

}  // namespace asap
