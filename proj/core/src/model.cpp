#include "asap/model.hpp"

#include <algorithm>
#include <cmath>

#include "asap/errors.hpp"

namespace asap {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (num_actions == 1) throw ConfigError("num_actions must be 0 (disabled) or >= 2");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative");
    if (mlp_hidden == 0) throw ConfigError("mlp_hidden must be >= 1");
    if (!(mlp_dropout >= 0.0 && mlp_dropout < 1.0)) throw ConfigError("mlp_dropout must lie in [0, 1)");
    turn_encoder.validate();
    if (turn_encoder.d_model != d_model) throw ConfigError("turn_encoder.d_model must equal d_model");
    if (hawkes) {
        score_encoder.validate();
        if (score_encoder.d_model != d_model) throw ConfigError("score_encoder.d_model must equal d_model");
    }
}

ModelConfig ModelConfig::desk() { return {}; }

ModelConfig ModelConfig::full_scale(std::size_t score_layers) {
    ModelConfig c;
    c.d_model = 768;
    c.turn_encoder = {768, 12, 2, 3072, 0.1};
    c.score_encoder = {768, 12, score_layers, 3072, 0.1};
    c.mlp_hidden = 192;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.d_model = 8;
    c.turn_encoder = {8, 2, 1, 16, 0.0};
    c.score_encoder = {8, 2, 1, 16, 0.0};
    c.mlp_hidden = 8;
    c.mlp_dropout = 0.0;
    return c;
}

// ---------------------------------------------------------------------------
// Free functions

Tensor intensity_from_logits(const Tensor& context_logits, const Tensor& state_logits, double beta) {
    return softmax(softplus(add(context_logits, state_logits), beta), -1);
}

Tensor soft_score_embedding(const Tensor& p_use, const Tensor& score_embeddings) {
    if (p_use.rank() != 2 || score_embeddings.rank() != 2 || p_use.dim(1) != score_embeddings.dim(1))
        throw DimensionError("soft_score_embedding: p " + shape_string(p_use.shape()) + " vs Z " +
                             shape_string(score_embeddings.shape()));
    return matmul(p_use, transpose(score_embeddings));
}

double contribution(double context_logit, double state_logit) {
    const double diff = context_logit - state_logit;
    if (diff >= 0.0) {
        const double e = std::exp(-diff);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(diff));
}

// ---------------------------------------------------------------------------
// AsapModel

AsapModel::AsapModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const std::size_t d = config_.d_model, k = config_.num_classes;
    // Registration order is part of the seeding contract: the base-estimator
    // parameters come first so an ablated model draws identical initial weights.
    turn_encoder_ = CausalEncoder(params_, "turn_encoder", config_.turn_encoder, rng);
    use_head_ = MlpHead(params_, "use_head", d, config_.mlp_hidden, k, config_.mlp_dropout, rng);
    if (config_.hawkes) {
        score_embeddings_ = params_.add_uniform(kScoreEmbeddingName, {d, k}, 1.0 / std::sqrt(static_cast<double>(k)),
                                                rng, false);
        score_encoder_ = CausalEncoder(params_, "score_encoder", config_.score_encoder, rng);
        context_intensity_ = MlpHead(params_, config_.shared_intensity_mlp ? "intensity" : "intensity.context", d,
                                     config_.mlp_hidden, k, config_.mlp_dropout, rng);
        state_intensity_ = config_.shared_intensity_mlp
                               ? context_intensity_
                               : MlpHead(params_, "intensity.state", d, config_.mlp_hidden, k, config_.mlp_dropout, rng);
    }
    if (config_.num_actions > 0)
        uar_head_ = MlpHead(params_, "uar_head", d, config_.mlp_hidden, config_.num_actions, config_.mlp_dropout, rng);
}

Tensor AsapModel::intensity(const Tensor& context, const Tensor& state, const ForwardContext& ctx) const {
    if (!config_.hawkes) throw ContractError("intensity: Hawkes head is disabled");
    return intensity_from_logits(context_intensity_.forward(context, ctx), state_intensity_.forward(state, ctx),
                                 config_.beta);
}

Tensor AsapModel::uar_head(const Tensor& context, const ForwardContext& ctx) const {
    if (config_.num_actions == 0) throw ContractError("uar_head: model has no action head (num_actions = 0)");
    return softmax(uar_head_.forward(context, ctx), -1);
}

ModelOutput AsapModel::forward(const Tensor& turn_vectors, const ForwardContext& ctx,
                               const ForwardOptions& options) const {
    if (!turn_vectors.defined() || turn_vectors.rank() != 2)
        throw ContractError("forward: expected [T x d] turn vectors");
    if (turn_vectors.dim(1) != config_.d_model)
        throw ConfigError("forward: turn vectors have width " + std::to_string(turn_vectors.dim(1)) +
                          " but d_model is " + std::to_string(config_.d_model));
    ModelOutput out;
    out.context = turn_encoder_.encode(turn_vectors, ctx);
    out.use_logits = use_head_.forward(out.context, ctx);
    out.p_use = softmax(out.use_logits, -1);

    if (config_.hawkes) {
        Tensor weights = out.p_use;
        if (config_.teacher_forcing && options.teacher_labels) {
            const auto& labels = *options.teacher_labels;
            const std::size_t t = out.p_use.dim(0), k = config_.num_classes;
            if (labels.size() != t) throw ContractError("teacher forcing: label count differs from turn count");
            std::vector<Tensor> rows;
            for (std::size_t i = 0; i < t; ++i) {
                if (labels[i]) {
                    std::vector<double> onehot(k, 0.0);
                    onehot.at(*labels[i]) = 1.0;
                    rows.push_back(Tensor::from({1, k}, std::move(onehot)));
                } else {
                    rows.push_back(slice(out.p_use, 0, i, 1));
                }
            }
            weights = rows.size() == 1 ? rows.front() : concat(rows, 0);
        }
        out.score_inputs = soft_score_embedding(weights, score_embeddings_);
        out.state = score_encoder_.encode(out.score_inputs, ctx);
        out.context_logits = context_intensity_.forward(out.context, ctx);
        out.state_logits = state_intensity_.forward(out.state, ctx);
        out.intensity = intensity_from_logits(out.context_logits, out.state_logits, config_.beta);
    }
    if (config_.num_actions > 0 && options.with_uar) out.p_uar = uar_head(out.context, ctx);
    return out;
}

// ---------------------------------------------------------------------------
// Predictions

namespace {

std::vector<double> row_of(const Tensor& t, std::size_t row) {
    const std::size_t cols = t.dim(1);
    const auto v = t.values();
    return {v.begin() + static_cast<std::ptrdiff_t>(row * cols), v.begin() + static_cast<std::ptrdiff_t>((row + 1) * cols)};
}

std::size_t argmax(const std::vector<double>& v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<TurnPrediction> to_predictions(const ModelOutput& output) {
    std::vector<TurnPrediction> preds(output.turns());
    for (std::size_t t = 0; t < preds.size(); ++t) {
        auto& p = preds[t];
        p.p_use = row_of(output.p_use, t);
        if (output.intensity.defined()) {
            p.intensity = row_of(output.intensity, t);
            p.predicted_class = argmax(p.intensity);
            p.contribution = contribution(output.context_logits.at(t, p.predicted_class),
                                          output.state_logits.at(t, p.predicted_class));
        } else {
            p.predicted_class = argmax(p.p_use);
        }
        if (output.p_uar.defined()) {
            p.p_uar = row_of(output.p_uar, t);
            p.predicted_action = argmax(p.p_uar);
        }
    }
    return preds;
}

std::vector<std::optional<std::size_t>> satisfaction_labels(const DialogueSession& dialogue) {
    std::vector<std::optional<std::size_t>> out;
    out.reserve(dialogue.turns.size());
    for (const auto& t : dialogue.turns) out.push_back(t.satisfaction);
    return out;
}

std::vector<std::optional<std::size_t>> action_labels(const DialogueSession& dialogue) {
    std::vector<std::optional<std::size_t>> out;
    out.reserve(dialogue.turns.size());
    for (const auto& t : dialogue.turns) out.push_back(t.action);
    return out;
}

// ---------------------------------------------------------------------------
// Estimator

Estimator::Estimator(ModelConfig config, std::unique_ptr<EmbeddingProvider> provider, std::uint64_t seed)
    : Estimator(AsapModel(std::move(config), seed), std::move(provider)) {}

Estimator::Estimator(AsapModel model, std::unique_ptr<EmbeddingProvider> provider)
    : model_(std::move(model)), provider_(std::move(provider)) {
    if (!provider_) throw ConfigError("estimator needs an embedding provider");
    if (provider_->dim() != model_.config().d_model)
        throw ConfigError("embedding provider dim " + std::to_string(provider_->dim()) + " does not match d_model " +
                          std::to_string(model_.config().d_model));
}

ModelOutput Estimator::forward(const DialogueSession& dialogue, const ForwardContext& ctx,
                               const ForwardOptions& options) const {
    if (dialogue.turns.empty()) throw ContractError("forward: dialogue '" + dialogue.id + "' has no turns");
    return model_.forward(provider_->embed_dialogue(dialogue), ctx, options);
}

std::vector<TurnPrediction> Estimator::predict(const DialogueSession& dialogue) const {
    const auto labels = satisfaction_labels(dialogue);
    ForwardOptions options;
    options.teacher_labels = &labels;
    return to_predictions(forward(dialogue, ForwardContext{}, options));
}

ParameterStore Estimator::all_parameters() const {
    ParameterStore all = model_.parameters();
    if (const auto* p = provider_->parameters()) all.append(*p);
    return all;
}

std::vector<std::string> Estimator::validate(const DialogueSession& dialogue) const {
    std::vector<std::string> problems;
    if (dialogue.turns.empty()) problems.push_back("dialogue '" + dialogue.id + "' has no turns");
    for (const auto& key : provider_->missing_keys(dialogue)) problems.push_back("missing embedding " + key);
    const auto& cfg = model_.config();
    for (std::size_t t = 0; t < dialogue.turns.size(); ++t) {
        const auto& turn = dialogue.turns[t];
        if (turn.satisfaction && *turn.satisfaction >= cfg.num_classes)
            problems.push_back("dialogue '" + dialogue.id + "' turn " + std::to_string(t) + ": satisfaction label " +
                               std::to_string(*turn.satisfaction) + " >= K=" + std::to_string(cfg.num_classes));
        if (turn.action && cfg.num_actions > 0 && *turn.action >= cfg.num_actions)
            problems.push_back("dialogue '" + dialogue.id + "' turn " + std::to_string(t) + ": action label " +
                               std::to_string(*turn.action) + " >= A=" + std::to_string(cfg.num_actions));
    }
    return problems;
}

}  // namespace asap
