#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "asap/checkpoint.hpp"
#include "asap/errors.hpp"
#include "asap/pipeline.hpp"
#include "asap/training.hpp"

using namespace asap;

namespace {

std::vector<DialogueSession> corpus(std::size_t n, std::uint64_t seed = 42, std::size_t actions = 0) {
    SynthSpec spec;
    spec.num_dialogues = n;
    spec.persistence = 0.5;
    spec.num_actions = actions;
    spec.seed = seed;
    return synthesize(spec);
}

ModelConfig tiny(std::size_t actions = 0, double gamma = 0.0) {
    auto c = ModelConfig::tiny();
    c.num_actions = actions;
    c.gamma = gamma;
    return c;
}

std::vector<std::vector<double>> snapshot(const ParameterStore& params) {
    std::vector<std::vector<double>> out;
    for (const auto& e : params.entries()) out.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
    return out;
}

std::vector<const DialogueSession*> pointers(const std::vector<DialogueSession>& ds, std::size_t from, std::size_t n) {
    std::vector<const DialogueSession*> out;
    for (std::size_t i = from; i < from + n; ++i) out.push_back(&ds[i]);
    return out;
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("asap_training_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
    EXPECT_NEAR(learning_rate(10, 100, 0.1, 1e-3), 1e-3, 1e-18);
    EXPECT_NEAR(learning_rate(55, 100, 0.1, 1e-3), 5e-4, 1e-18);
    EXPECT_EQ(learning_rate(100, 100, 0.1, 1e-3), 0.0);
    EXPECT_EQ(learning_rate(0, 100, 0.1, 1e-3), 0.0);
    EXPECT_NEAR(learning_rate(5, 100, 0.1, 1e-3), 5e-4, 1e-18);
}

TEST(Schedule, ContinuousAndPeaksAtEndOfWarmup) {
    double peak_step = 0, peak = -1;
    for (double s = 0; s <= 200; s += 0.5) {
        const double lr = learning_rate(s, 200, 0.1, 2e-5);
        if (lr > peak) peak = lr, peak_step = s;
        EXPECT_LT(std::abs(learning_rate(s + 1e-7, 200, 0.1, 2e-5) - lr), 1e-10);
    }
    EXPECT_EQ(peak_step, 20.0);
    EXPECT_NEAR(peak, 2e-5, 1e-20);
    // No warmup starts at the peak.
    EXPECT_NEAR(learning_rate(1, 10, 0.0, 1.0), 0.9, 1e-15);
}

TEST(Losses, UseLossExamples) {
    EXPECT_NEAR(loss_use(Tensor::matrix({{0.5, 0.5}}), {0}).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(loss_use(Tensor::matrix({{0.5, 0.5}, {0.75, 0.25}}), {0, 1}).item(), 1.039721, 1e-6);
    EXPECT_NEAR(loss_use(Tensor::matrix({{1e-300, 1.0}}), {1}).item(), 0.0, 1e-15);
    EXPECT_NEAR(loss_use(Tensor::matrix({{0.5, 0.5}, {0.1, 0.9}}), {0, std::nullopt}).item(), std::log(2.0), 1e-15);
    EXPECT_THROW(loss_use(Tensor::matrix({{0.5, 0.5}}), {std::nullopt}), ContractError);
}

TEST(Losses, UarLossExamples) {
    EXPECT_NEAR(loss_uar(Tensor::full({1, 7}, 1.0 / 7), {3}, 7).item(), std::log(7.0), 1e-12);
    EXPECT_NEAR(loss_uar(Tensor::matrix({{0.9, 0.1}}), {0}, 2).item(), 0.105361, 1e-6);
    EXPECT_THROW(loss_uar(Tensor::matrix({{0.9, 0.1}}), {0}, 0), ContractError);
}

TEST(Losses, JointLossExamples) {
    EXPECT_DOUBLE_EQ(loss_joint(Tensor::scalar(1.0), Tensor::scalar(0.5), 0.5).item(), 1.25);
    const auto use = Tensor::scalar(0.123456789);
    const auto joint = loss_joint(use, Tensor::scalar(1e6), 0.0);
    EXPECT_EQ(joint.item(), use.item());
    EXPECT_EQ(joint.node(), use.node());
    EXPECT_THROW(loss_joint(use, use, -1.0), ContractError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    ParameterStore store;
    auto p = store.add("p", Tensor::scalar(1.0, true), false);
    AdamW opt(store);
    p.mutable_grad()[0] = 1.0;
    opt.step(1e-3, 0.0);
    EXPECT_NEAR(p.item() - 1.0, -1e-3, 1e-11);
}

TEST(Adam, ZeroGradientAndNoDecayLeaveParametersUnchanged) {
    ParameterStore store;
    auto p = store.add("p", Tensor::from({3}, {0.5, -2.0, 7.0}, true), true);
    AdamW opt(store);
    opt.step(1e-2, 0.0);
    EXPECT_EQ(p.at(0), 0.5);
    EXPECT_EQ(p.at(1), -2.0);
    EXPECT_EQ(p.at(2), 7.0);
}

TEST(Adam, DecayOnlyTouchesFlaggedParameters) {
    ParameterStore store;
    auto w = store.add("w", Tensor::scalar(2.0, true), true);
    auto b = store.add("b", Tensor::scalar(2.0, true), false);
    AdamW opt(store);
    opt.step(0.1, 0.5);
    EXPECT_DOUBLE_EQ(w.item(), 2.0 * (1 - 0.1 * 0.5));
    EXPECT_EQ(b.item(), 2.0);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
    ParameterStore store;
    store.add("fine", Tensor::scalar(1.0, true), true);
    auto bad = store.add("encoder.bad", Tensor::scalar(1.0, true), true);
    AdamW opt(store);
    bad.mutable_grad()[0] = std::numeric_limits<double>::quiet_NaN();
    try {
        opt.step(1e-3, 0.0);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("encoder.bad"), std::string::npos);
    }
    EXPECT_EQ(opt.steps_taken(), 0u);
}

TEST(TrainerTest, StepUsesScheduledRate) {
    const auto ds = corpus(8);
    auto est = make_estimator(tiny(), {}, ds, 1);
    TrainConfig cfg;
    cfg.peak_lr = 1e-2;
    Trainer trainer(est, cfg, 20);
    const auto batch = pointers(ds, 0, 4);
    const auto r1 = trainer.step(batch);
    EXPECT_NEAR(r1.lr, 1e-2 * 1 / 2.0, 1e-15);  // warmup of 2 steps
    const auto r2 = trainer.step(batch);
    EXPECT_NEAR(r2.lr, 1e-2, 1e-15);
    EXPECT_EQ(r1.dialogues, 4u);
    EXPECT_GT(r1.loss_use, 0.0);
    EXPECT_EQ(trainer.steps_taken(), 2u);
}

TEST(TrainerTest, BatchLossIsMeanOfDialogueLosses) {
    const auto ds = corpus(3);
    auto est = make_estimator(tiny(), {}, ds, 1);
    double expected = 0.0;
    for (const auto& d : ds) expected += *dialogue_loss(est, d, {}).use;
    expected /= 3;
    const TrainConfig cfg;
    // Dropout is zero in the tiny config, so the training forward equals inference.
    Trainer trainer(est, cfg, 10);
    const auto r = trainer.step(pointers(ds, 0, 3));
    EXPECT_NEAR(r.loss_joint, expected, 1e-12);
}

TEST(Train, DeterministicUnderFixedSeed) {
    const auto ds = corpus(30);
    const auto splits = split(ds, {0.6, 0.2, 0.2}, 3);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    auto run = [&] {
        auto est = make_estimator(ModelConfig::desk(), {}, splits.train, cfg.seed);
        auto report = train(est, splits, cfg);
        return std::make_pair(report, snapshot(est.all_parameters()));
    };
    const auto [a, pa] = run();
    const auto [b, pb] = run();
    ASSERT_EQ(a.epochs.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(a.epochs[i].loss_joint, b.epochs[i].loss_joint);
        EXPECT_EQ(a.epochs[i].validation->macro_f1, b.epochs[i].validation->macro_f1);
    }
    EXPECT_EQ(pa, pb);
}

TEST(Train, GammaZeroMatchesSingleTaskTrajectory) {
    const auto ds = corpus(12, 42, 4);
    TrainConfig cfg;
    auto single = make_estimator(tiny(0, 0.0), {}, ds, cfg.seed);
    auto multi = make_estimator(tiny(4, 0.0), {}, ds, cfg.seed);
    Trainer ts(single, cfg, 6);
    Trainer tm(multi, cfg, 6);
    for (std::size_t s = 0; s < 3; ++s) {
        const auto batch = pointers(ds, 4 * s, 4);
        EXPECT_EQ(ts.step(batch).loss_joint, tm.step(batch).loss_joint) << "step " << s;
    }
    const auto single_params = single.all_parameters();
    const auto multi_params = multi.all_parameters();
    for (const auto& e : single_params.entries()) {
        const auto* other = multi_params.find(e.name);
        ASSERT_NE(other, nullptr);
        EXPECT_TRUE(std::equal(e.tensor.values().begin(), e.tensor.values().end(), other->tensor.values().begin()))
            << e.name;
    }
}

TEST(Train, SelectedEpochMaximisesValidationF1) {
    const auto ds = corpus(40, 5);
    const auto splits = split(ds, {0.5, 0.25, 0.25}, 5);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 4;
    const auto dir = scratch_dir("select");
    TrainOptions options;
    options.checkpoint_path = dir / "model.ckpt";
    options.report_path = dir / "report.jsonl";
    auto est = make_estimator(tiny(), {}, splits.train, cfg.seed);
    const auto report = train(est, splits, cfg, options);

    // Re-derive the selection from the written report alone.
    std::ifstream in(options.report_path);
    std::string line;
    double best = -1;
    std::size_t best_epoch = 0, recorded = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("selected_epoch")) {
            recorded = j["selected_epoch"].get<std::size_t>();
            continue;
        }
        if (j["val_f1"].get<double>() > best) best = j["val_f1"].get<double>(), best_epoch = j["epoch"].get<std::size_t>();
    }
    EXPECT_EQ(recorded, best_epoch);
    EXPECT_EQ(report.selected_epoch, best_epoch);

    // The restored weights are the selected epoch's: their validation F1 equals the recorded best.
    EXPECT_DOUBLE_EQ(evaluate_corpus(est, splits.validation).macro_f1, best);
    EXPECT_TRUE(std::filesystem::exists(options.checkpoint_path));
    std::filesystem::remove_all(dir);
}

TEST(Train, LossDecreasesOnOverfitSet) {
    SynthSpec spec;
    spec.num_dialogues = 64;
    const auto ds = synthesize(spec);
    for (std::uint64_t seed : {42, 43, 44}) {
        TrainConfig cfg;
        cfg.epochs = 50;
        cfg.seed = seed;
        auto est = make_estimator(ModelConfig::desk(), {}, ds, seed);
        const auto report = train(est, DatasetSplits{ds, {}, {}}, cfg);
        EXPECT_LT(report.epochs[49].loss_joint, report.epochs[0].loss_joint) << "seed " << seed;
    }
}

TEST(Preflight, ListsEveryProblem) {
    const auto ds = corpus(6);
    auto store = std::make_shared<EmbeddingStore>(random_embedding_store({ds[0], ds[1], ds[2]}, 8, 1));
    Estimator est(tiny(), std::make_unique<FileEmbeddingProvider>(store), 1);
    auto bad = ds[1];
    bad.turns[0].satisfaction = 7;
    const DatasetSplits splits{{ds[0], bad}, {ds[2], ds[3]}, {ds[0], ds[4]}};
    const auto problems = preflight(est, splits);
    auto count = [&](const std::string& needle) {
        return std::count_if(problems.begin(), problems.end(),
                             [&](const std::string& p) { return p.find(needle) != std::string::npos; });
    };
    EXPECT_EQ(count("missing embedding (dialogue_id=" + ds[3].id), static_cast<long>(ds[3].size()));
    EXPECT_EQ(count("missing embedding (dialogue_id=" + ds[4].id), static_cast<long>(ds[4].size()));
    EXPECT_EQ(count("satisfaction label 7"), 1);
    EXPECT_EQ(count("appears in both train and test"), 1);

    TrainConfig cfg;
    cfg.epochs = 1;
    try {
        train(est, splits, cfg);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string what = e.what();
        for (const auto& p : problems) EXPECT_NE(what.find(p), std::string::npos) << p;
    }
}

TEST(Gradcheck, TinyModelPasses) {
    const auto report = gradcheck(ModelConfig::tiny());
    EXPECT_TRUE(report.passed) << report.to_json().dump();
    EXPECT_LT(report.max_rel_error, 1e-4);
    EXPECT_FALSE(report.parameters.empty());
}

TEST(Gradcheck, MultiTaskModelPasses) {
    const auto report = gradcheck(tiny(4, 0.5));
    EXPECT_TRUE(report.passed) << report.to_json().dump();
    bool saw_uar = false;
    for (const auto& p : report.parameters) saw_uar |= p.name.rfind("uar_head.", 0) == 0;
    EXPECT_TRUE(saw_uar);
}

TEST(Gradcheck, CorruptedBackwardFailsAndNamesOp) {
    asap::testing::ScopedBackwardFault fault("softplus", 1.01);
    const auto report = gradcheck(ModelConfig::tiny());
    EXPECT_FALSE(report.passed);
    ASSERT_FALSE(report.failing_parameters.empty());
    EXPECT_NE(std::find(report.failing_ops.begin(), report.failing_ops.end(), "softplus"), report.failing_ops.end());
    EXPECT_EQ(report.failing_ops.size(), 1u);
}
