#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "asap/data.hpp"
#include "asap/metrics.hpp"
#include "asap/model.hpp"
#include "asap/nn.hpp"
#include "asap/tensor.hpp"

namespace asap {

struct TrainConfig {
    double peak_lr = 1e-3;
    double warmup_proportion = 0.1;
    std::size_t epochs = 200;
    std::size_t batch_size = 8;
    double weight_decay = 0.01;
    std::uint64_t seed = 42;

    void validate() const;

    /// Fine-tuning settings for a large pretrained encoder: lr 2e-5, 5 epochs, batch 16.
    static TrainConfig full_scale();
};

// Seed derivation. Model init uses the seed itself; the others are offset so
// the streams do not coincide.
inline std::uint64_t provider_seed(std::uint64_t seed) { return seed + 1000003; }
inline std::uint64_t shuffle_seed(std::uint64_t seed) { return seed + 1; }
inline std::uint64_t dropout_seed(std::uint64_t seed) { return seed + 2; }

/// Linear warmup from 0 to `peak` over warmup_proportion * total_steps, then linear decay to 0 at total_steps.
double learning_rate(double step, std::size_t total_steps, double warmup_proportion, double peak);

/// Adam moments with decoupled weight decay:
///   p <- p * (1 - lr * wd)          (only parameters flagged for decay)
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
public:
    explicit AdamW(ParameterStore params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update from the current grads. NumericalError names the first parameter with a non-finite grad.
    void step(double lr, double weight_decay);
    std::size_t steps_taken() const { return t_; }
    const ParameterStore& parameters() const { return params_; }

private:
    ParameterStore params_;
    double beta1_, beta2_, eps_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Mean of -log lambda_{s_t}(t) over labelled turns. ContractError when no turn is labelled.
Tensor loss_use(const Tensor& distribution, const std::vector<std::optional<std::size_t>>& labels);
/// Mean of -log p_uar[t, a_t] over labelled turns. ContractError when the action head is disabled.
Tensor loss_uar(const Tensor& p_uar, const std::vector<std::optional<std::size_t>>& labels, std::size_t num_actions);
/// use + gamma * uar; exactly `use` when gamma == 0.
Tensor loss_joint(const Tensor& use, const Tensor& uar, double gamma);

struct DialogueLoss {
    Tensor joint;  // undefined when the dialogue carries no usable label
    std::optional<double> use;
    std::optional<double> uar;
};

/// Joint objective for one dialogue under the estimator's config.
DialogueLoss dialogue_loss(const Estimator& estimator, const DialogueSession& dialogue, const ForwardContext& ctx);

struct StepResult {
    double loss_use = 0.0;
    double loss_uar = 0.0;
    double loss_joint = 0.0;
    double lr = 0.0;
    std::size_t dialogues = 0;
};

/// Single-writer optimisation loop over batches of whole dialogues.
/// Losses are averaged per dialogue first, then across the batch.
class Trainer {
public:
    Trainer(Estimator& estimator, const TrainConfig& config, std::size_t total_steps);

    StepResult step(std::span<const DialogueSession* const> batch);
    std::size_t steps_taken() const { return optimizer_.steps_taken(); }

private:
    Estimator& estimator_;
    TrainConfig config_;
    std::size_t total_steps_;
    AdamW optimizer_;
    Rng dropout_rng_;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double loss_use = 0.0;
    double loss_uar = 0.0;
    double loss_joint = 0.0;
    std::optional<EvalReport> validation;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    std::size_t selected_epoch = 0;
    std::string checkpoint_path;

    /// One JSON object per epoch followed by a summary record.
    std::string to_jsonl() const;
};

struct TrainOptions {
    /// Best checkpoint is written here when non-empty.
    std::filesystem::path checkpoint_path;
    /// Line-delimited report is written here when non-empty.
    std::filesystem::path report_path;
    /// Provider description stored in the checkpoint.
    nlohmann::json provider_config = nlohmann::json::object();
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Every problem that would stop training, gathered across all splits.
std::vector<std::string> preflight(const Estimator& estimator, const DatasetSplits& splits);

/// Trains, selects the epoch with the best validation macro-F1 (earliest on ties),
/// restores its weights into `estimator` and writes the checkpoint.
TrainReport train(Estimator& estimator, const DatasetSplits& splits, const TrainConfig& config,
                  const TrainOptions& options = {});

// ---------------------------------------------------------------------------
// Gradient checking

/// |a - n| / max(|a|, |n|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

struct ParameterCheck {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct OpCheck {
    std::string op;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradcheckOptions {
    double step = 1e-4;
    double tolerance = 1e-4;
    std::uint64_t seed = 42;
    std::size_t turns = 2;
    /// Also run the per-primitive checks that localise a failure to an op.
    bool check_ops = true;
};

struct GradcheckReport {
    std::vector<ParameterCheck> parameters;
    std::vector<OpCheck> ops;
    double max_rel_error = 0.0;
    std::string worst_parameter;
    std::vector<std::string> failing_parameters;
    std::vector<std::string> failing_ops;
    double tolerance = 0.0;
    double seconds = 0.0;
    bool passed = false;

    nlohmann::json to_json() const;
};

/// Central differences against backward for every scalar of every parameter.
std::vector<ParameterCheck> check_gradients(const std::function<Tensor()>& loss_fn, ParameterStore& params,
                                            double step);

/// Randomised check of each differentiable primitive in isolation.
std::vector<OpCheck> check_primitive_ops(std::uint64_t seed, double step, double tolerance);

/// Builds a model from `config` with a frozen random-embedding provider, runs the
/// joint loss on a short labelled dialogue and compares every parameter gradient
/// with central differences.
GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options = {});

}  // namespace asap
