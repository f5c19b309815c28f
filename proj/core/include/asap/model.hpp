#pragma once

// Satisfaction estimator with a discrete Hawkes-process head.
//
// Forward pass for a dialogue with turn vectors h_1..h_T:
//   c_t      = turn-level causal encoder over h_1..h_t
//   p_use_t  = softmax(MLP(c_t))
//   v_t      = Z p_use_t                         (soft score embedding)
//   x_t      = score-level causal encoder over v_1..v_t
//   lambda_t = softmax_k( softplus_beta( ctxMLP(c_t)[k] + stateMLP(x_t)[k] ) )
// With the Hawkes head disabled the model reduces to the base estimator and
// predicts from p_use alone.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "asap/data.hpp"
#include "asap/nn.hpp"
#include "asap/tensor.hpp"
#include "asap/utterance.hpp"

namespace asap {

struct ModelConfig {
    std::size_t num_classes = 3;
    /// Number of user action types; 0 disables the action head.
    std::size_t num_actions = 0;
    std::size_t d_model = 64;
    EncoderConfig turn_encoder{64, 4, 2, 256, 0.1};
    EncoderConfig score_encoder{64, 4, 2, 256, 0.1};
    std::size_t mlp_hidden = 48;
    double mlp_dropout = 0.1;
    /// Softplus softness.
    double beta = 1.0;
    /// Weight of the action loss in the joint objective.
    double gamma = 0.0;
    bool hawkes = true;
    /// One MLP for both intensity branches instead of separate context/state MLPs.
    bool shared_intensity_mlp = false;
    /// Diagnostic only: embed gold labels Z e_{s_t} instead of soft scores.
    bool teacher_forcing = false;

    void validate() const;

    /// Laptop-scale defaults (d = 64, 4 heads, L = N = 2).
    static ModelConfig desk();
    /// Published hyperparameters (d = 768, 12 heads, L = 2, FFN 3072, MLP hidden 192).
    static ModelConfig full_scale(std::size_t score_layers = 2);
    /// Gradient-check size: d = 8, 2 heads, L = N = 1.
    static ModelConfig tiny();
};

struct ModelOutput {
    Tensor context;         // c_t rows [T x d]
    Tensor use_logits;      // [T x K]
    Tensor p_use;           // [T x K]
    Tensor score_inputs;    // v_t rows [T x d]; undefined without Hawkes
    Tensor state;           // x_t rows [T x d]
    Tensor context_logits;  // ctxMLP(c_t) [T x K]
    Tensor state_logits;    // stateMLP(x_t) [T x K]
    Tensor intensity;       // lambda [T x K]
    Tensor p_uar;           // [T x A]; undefined when the action head is off or skipped

    /// The distribution the prediction and the satisfaction loss are taken from.
    const Tensor& prediction_distribution() const { return intensity.defined() ? intensity : p_use; }
    std::size_t turns() const { return p_use.dim(0); }
};

struct ForwardOptions {
    /// Evaluate the action head (when the model has one).
    bool with_uar = true;
    /// Gold satisfaction labels used when config.teacher_forcing is set; unlabeled turns fall back to p_use.
    const std::vector<std::optional<std::size_t>>* teacher_labels = nullptr;
};

/// lambda = softmax(softplus_beta(context_logits + state_logits)) row-wise.
Tensor intensity_from_logits(const Tensor& context_logits, const Tensor& state_logits, double beta);
/// v_t = Z p_t for each row p_t of `p_use`; Z is [d x K]. Returns [T x d].
Tensor soft_score_embedding(const Tensor& p_use, const Tensor& score_embeddings);
/// exp(state) / (exp(state) + exp(context)): share of the intensity logit owed to the label history.
double contribution(double context_logit, double state_logit);

class AsapModel {
public:
    AsapModel(ModelConfig config, std::uint64_t seed);

    /// turn_vectors: [T x d], T >= 1.
    ModelOutput forward(const Tensor& turn_vectors, const ForwardContext& ctx, const ForwardOptions& options = {}) const;

    /// Intensity for precomputed c_t and x_t rows.
    Tensor intensity(const Tensor& context, const Tensor& state, const ForwardContext& ctx) const;
    /// Action distribution from c_t rows. ContractError when the model has no action head.
    Tensor uar_head(const Tensor& context, const ForwardContext& ctx) const;

    const ModelConfig& config() const { return config_; }
    ParameterStore& parameters() { return params_; }
    const ParameterStore& parameters() const { return params_; }
    const Tensor& score_embeddings() const { return score_embeddings_; }

    static constexpr const char* kScoreEmbeddingName = "score.embeddings";

private:
    ModelConfig config_;
    ParameterStore params_;
    CausalEncoder turn_encoder_;
    MlpHead use_head_;
    Tensor score_embeddings_;
    CausalEncoder score_encoder_;
    MlpHead context_intensity_;
    MlpHead state_intensity_;
    MlpHead uar_head_;
};

struct TurnPrediction {
    std::vector<double> p_use;
    /// Empty when the Hawkes head is disabled.
    std::vector<double> intensity;
    std::vector<double> p_uar;
    std::size_t predicted_class = 0;
    std::optional<std::size_t> predicted_action;
    /// Contribution of the label history for the predicted class (Hawkes only).
    std::optional<double> contribution;
};

std::vector<TurnPrediction> to_predictions(const ModelOutput& output);

/// Utterance provider plus model: dialogue in, per-turn predictions out.
class Estimator {
public:
    Estimator(ModelConfig config, std::unique_ptr<EmbeddingProvider> provider, std::uint64_t seed);
    Estimator(AsapModel model, std::unique_ptr<EmbeddingProvider> provider);

    ModelOutput forward(const DialogueSession& dialogue, const ForwardContext& ctx,
                        const ForwardOptions& options = {}) const;
    /// Inference-mode predictions (dropout off).
    std::vector<TurnPrediction> predict(const DialogueSession& dialogue) const;

    /// Model parameters followed by provider parameters (handles share storage).
    ParameterStore all_parameters() const;
    /// Human-readable problems (coverage gaps, label ranges) for a dialogue.
    std::vector<std::string> validate(const DialogueSession& dialogue) const;

    const AsapModel& model() const { return model_; }
    AsapModel& model() { return model_; }
    const EmbeddingProvider& provider() const { return *provider_; }
    EmbeddingProvider& provider() { return *provider_; }
    const ModelConfig& config() const { return model_.config(); }

private:
    AsapModel model_;
    std::unique_ptr<EmbeddingProvider> provider_;
};

std::vector<std::optional<std::size_t>> satisfaction_labels(const DialogueSession& dialogue);
std::vector<std::optional<std::size_t>> action_labels(const DialogueSession& dialogue);

}  // namespace asap
