#include "asap/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "asap/checkpoint.hpp"
#include "asap/errors.hpp"
#include "asap/pipeline.hpp"

namespace asap {

void TrainConfig::validate() const {
    if (!(peak_lr > 0.0)) throw ConfigError("train.peak_lr must be positive");
    if (!(warmup_proportion >= 0.0 && warmup_proportion <= 1.0))
        throw ConfigError("train.warmup_proportion must lie in [0, 1]");
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
}

TrainConfig TrainConfig::full_scale() {
    TrainConfig c;
    c.peak_lr = 2e-5;
    c.epochs = 5;
    c.batch_size = 16;
    return c;
}

double learning_rate(double step, std::size_t total_steps, double warmup_proportion, double peak) {
    const auto total = static_cast<double>(total_steps);
    const double warmup = warmup_proportion * total;
    if (step <= 0.0) return 0.0;
    if (step < warmup) return peak * step / warmup;
    if (total <= warmup) return peak;
    if (step >= total) return 0.0;
    return peak * (total - step) / (total - warmup);
}

// ---------------------------------------------------------------------------
// AdamW

AdamW::AdamW(ParameterStore params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_.entries()) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::step(double lr, double weight_decay) {
    auto& entries = params_.entries();
    for (const auto& p : entries)
        for (double g : p.tensor.grad())
            if (!std::isfinite(g)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");

    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& p = entries[i];
        auto values = p.tensor.mutable_values();
        const auto grad = p.tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const double decay = p.decay ? 1.0 - lr * weight_decay : 1.0;
        for (std::size_t j = 0; j < values.size(); ++j) {
            const double g = grad[j];
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            values[j] = values[j] * decay - lr * m_hat / (std::sqrt(v_hat) + eps_);
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

Tensor loss_use(const Tensor& distribution, const std::vector<std::optional<std::size_t>>& labels) {
    if (std::none_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }))
        throw ContractError("loss_use: no turn carries a satisfaction label");
    return nll(distribution, labels);
}

Tensor loss_uar(const Tensor& p_uar, const std::vector<std::optional<std::size_t>>& labels, std::size_t num_actions) {
    if (num_actions == 0) throw ContractError("loss_uar: action head is disabled (A = 0)");
    if (!p_uar.defined()) throw ContractError("loss_uar: no action distribution was computed");
    if (std::none_of(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }))
        throw ContractError("loss_uar: no turn carries an action label");
    return nll(p_uar, labels);
}

Tensor loss_joint(const Tensor& use, const Tensor& uar, double gamma) {
    if (!(gamma >= 0.0)) throw ContractError("loss_joint: gamma must be non-negative");
    if (gamma == 0.0) return use;
    return add(use, scale(uar, gamma));
}

DialogueLoss dialogue_loss(const Estimator& estimator, const DialogueSession& dialogue, const ForwardContext& ctx) {
    const auto& cfg = estimator.config();
    const auto sat = satisfaction_labels(dialogue);
    const auto act = action_labels(dialogue);
    const bool has_sat = std::any_of(sat.begin(), sat.end(), [](const auto& l) { return l.has_value(); });
    const bool has_act = std::any_of(act.begin(), act.end(), [](const auto& l) { return l.has_value(); });
    const bool use_uar = cfg.num_actions > 0 && cfg.gamma > 0.0 && has_act;

    ForwardOptions options;
    options.with_uar = use_uar;
    options.teacher_labels = &sat;
    const ModelOutput out = estimator.forward(dialogue, ctx, options);

    DialogueLoss result;
    Tensor use, uar;
    if (has_sat) {
        use = loss_use(out.prediction_distribution(), sat);
        result.use = use.item();
    }
    if (use_uar) {
        uar = loss_uar(out.p_uar, act, cfg.num_actions);
        result.uar = uar.item();
    }
    if (use.defined() && uar.defined())
        result.joint = loss_joint(use, uar, cfg.gamma);
    else if (use.defined())
        result.joint = use;
    else if (uar.defined())
        result.joint = scale(uar, cfg.gamma);
    return result;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(Estimator& estimator, const TrainConfig& config, std::size_t total_steps)
    : estimator_(estimator),
      config_(config),
      total_steps_(total_steps),
      optimizer_(estimator.all_parameters()),
      dropout_rng_(dropout_seed(config.seed)) {
    config_.validate();
}

StepResult Trainer::step(std::span<const DialogueSession* const> batch) {
    ParameterStore params = estimator_.all_parameters();
    params.zero_grad();

    StepResult result;
    ForwardContext ctx{true, &dropout_rng_};
    Tensor total;
    std::size_t n_use = 0, n_uar = 0;
    for (const auto* d : batch) {
        auto loss = dialogue_loss(estimator_, *d, ctx);
        if (!loss.joint.defined()) continue;
        total = total.defined() ? add(total, loss.joint) : loss.joint;
        ++result.dialogues;
        if (loss.use) {
            result.loss_use += *loss.use;
            ++n_use;
        }
        if (loss.uar) {
            result.loss_uar += *loss.uar;
            ++n_uar;
        }
    }
    result.lr = learning_rate(static_cast<double>(optimizer_.steps_taken() + 1), total_steps_,
                              config_.warmup_proportion, config_.peak_lr);
    if (result.dialogues == 0) return result;

    const Tensor batch_loss = scale(total, 1.0 / static_cast<double>(result.dialogues));
    result.loss_joint = batch_loss.item();
    if (!std::isfinite(result.loss_joint)) throw NumericalError("non-finite training loss");
    if (n_use) result.loss_use /= static_cast<double>(n_use);
    if (n_uar) result.loss_uar /= static_cast<double>(n_uar);

    backward(batch_loss);
    optimizer_.step(result.lr, config_.weight_decay);
    return result;
}

// ---------------------------------------------------------------------------
// Training loop

std::string TrainReport::to_jsonl() const {
    std::string out;
    for (const auto& e : epochs) {
        nlohmann::json j{{"epoch", e.epoch}, {"loss_use", e.loss_use}, {"loss_uar", e.loss_uar}, {"loss_joint", e.loss_joint}};
        if (e.validation) {
            j["val_accuracy"] = e.validation->accuracy;
            j["val_precision"] = e.validation->macro_precision;
            j["val_recall"] = e.validation->macro_recall;
            j["val_f1"] = e.validation->macro_f1;
        }
        out += j.dump() + '\n';
    }
    out += nlohmann::json{{"selected_epoch", selected_epoch}, {"checkpoint", checkpoint_path}}.dump() + '\n';
    return out;
}

std::vector<std::string> preflight(const Estimator& estimator, const DatasetSplits& splits) {
    std::vector<std::string> problems;
    if (splits.train.empty()) problems.emplace_back("training split is empty");
    const std::pair<const char*, const std::vector<DialogueSession>*> named[] = {
        {"train", &splits.train}, {"validation", &splits.validation}, {"test", &splits.test}};
    std::set<std::string> ids[3];
    for (std::size_t s = 0; s < 3; ++s)
        for (const auto& d : *named[s].second) {
            ids[s].insert(d.id);
            for (auto& p : estimator.validate(d)) problems.push_back(std::string(named[s].first) + ": " + p);
        }
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = a + 1; b < 3; ++b)
            for (const auto& id : ids[a])
                if (ids[b].count(id))
                    problems.push_back("dialogue '" + id + "' appears in both " + named[a].first + " and " +
                                       named[b].first);
    return problems;
}

TrainReport train(Estimator& estimator, const DatasetSplits& splits, const TrainConfig& config,
                  const TrainOptions& options) {
    config.validate();
    if (auto problems = preflight(estimator, splits); !problems.empty()) {
        std::string msg = "pre-flight validation failed (" + std::to_string(problems.size()) + " problems):";
        for (const auto& p : problems) msg += "\n  " + p;
        throw ConfigError(msg);
    }

    const std::size_t n = splits.train.size();
    const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    Trainer trainer(estimator, config, steps_per_epoch * config.epochs);
    Rng shuffle_rng(shuffle_seed(config.seed));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    ParameterStore params = estimator.all_parameters();
    std::vector<std::vector<double>> best;
    double best_f1 = -1.0;

    TrainReport report;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += config.batch_size) {
            std::vector<const DialogueSession*> batch;
            for (std::size_t i = start; i < std::min(n, start + config.batch_size); ++i)
                batch.push_back(&splits.train[order[i]]);
            const auto r = trainer.step(batch);
            if (r.dialogues == 0) continue;
            rec.loss_use += r.loss_use;
            rec.loss_uar += r.loss_uar;
            rec.loss_joint += r.loss_joint;
            ++batches;
        }
        if (batches) {
            rec.loss_use /= static_cast<double>(batches);
            rec.loss_uar /= static_cast<double>(batches);
            rec.loss_joint /= static_cast<double>(batches);
        }

        const bool has_val = !splits.validation.empty();
        if (has_val) rec.validation = evaluate_corpus(estimator, splits.validation);
        // Without a validation split the last epoch is kept.
        const double score = has_val ? rec.validation->macro_f1 : static_cast<double>(epoch);
        if (score > best_f1) {
            best_f1 = score;
            report.selected_epoch = epoch;
            best.clear();
            for (const auto& p : params.entries()) best.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
        }
        report.epochs.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);
    }

    for (std::size_t i = 0; i < params.entries().size(); ++i) {
        auto dst = params.entries()[i].tensor.mutable_values();
        std::copy(best[i].begin(), best[i].end(), dst.begin());
    }
    if (!options.checkpoint_path.empty()) {
        save_estimator(options.checkpoint_path, estimator, options.provider_config);
        report.checkpoint_path = options.checkpoint_path.string();
    }
    if (!options.report_path.empty()) {
        std::ofstream out(options.report_path);
        if (!out) throw IoError("cannot write report " + options.report_path.string());
        out << report.to_jsonl();
    }
    return report;
}

}  // namespace asap
