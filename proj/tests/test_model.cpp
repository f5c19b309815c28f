#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "asap/errors.hpp"
#include "asap/model.hpp"
#include "asap/pipeline.hpp"
#include "asap/training.hpp"

using namespace asap;

namespace {

std::vector<double> row(const Tensor& t, std::size_t r) {
    std::vector<double> out(t.dim(1));
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = t.at(r, c);
    return out;
}

Tensor& param(AsapModel& m, const std::string& name) {
    for (auto& e : m.parameters().entries())
        if (e.name == name) return e.tensor;
    throw std::runtime_error("no parameter " + name);
}

ModelConfig small(bool hawkes = true, std::size_t actions = 0) {
    auto c = ModelConfig::tiny();
    c.hawkes = hawkes;
    c.num_actions = actions;
    return c;
}

Estimator small_estimator(const std::vector<DialogueSession>& train, bool hawkes = true, std::size_t actions = 0,
                          std::uint64_t seed = 42) {
    ProviderConfig provider;
    provider.min_count = 1;
    return make_estimator(small(hawkes, actions), provider, train, seed);
}

std::vector<DialogueSession> corpus(std::size_t n, std::size_t actions = 0) {
    SynthSpec spec;
    spec.num_dialogues = n;
    spec.persistence = 0.5;
    spec.num_actions = actions;
    return synthesize(spec);
}

}  // namespace

TEST(Intensity, ZeroLogitsGiveUniform) {
    const auto lam = intensity_from_logits(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), 1.0);
    for (double v : lam.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Intensity, TwoClassHandComputed) {
    const auto lam = intensity_from_logits(Tensor::matrix({{1, 0}}), Tensor::matrix({{0, 0}}), 1.0);
    const double e = std::exp(1.0);
    EXPECT_NEAR(lam.at(0, 0), (1 + e) / (3 + e), 1e-12);
    EXPECT_NEAR(lam.at(0, 0), 0.650244, 1e-6);
    EXPECT_NEAR(lam.at(0, 1), 2 / (3 + e), 1e-12);
}

TEST(Intensity, NotInvariantToLogitShift) {
    const auto a = intensity_from_logits(Tensor::matrix({{0, 1}}), Tensor::zeros({1, 2}), 1.0);
    const auto b = intensity_from_logits(Tensor::matrix({{5, 6}}), Tensor::zeros({1, 2}), 1.0);
    EXPECT_GT(std::abs(a.at(0, 0) - b.at(0, 0)), 1e-3);
}

TEST(Intensity, BetaScalesSoftplusInput) {
    // f(y) = beta * log(1 + exp(y / beta))
    const auto lam = intensity_from_logits(Tensor::matrix({{2, 1, 0}}), Tensor::zeros({1, 3}), 0.5);
    double expected[3], z = 0.0;
    for (int k = 0; k < 3; ++k) z += expected[k] = std::exp(0.5 * std::log1p(std::exp((2 - k) / 0.5)));
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(lam.at(0, k), expected[k] / z, 1e-12);
}

TEST(Contribution, HandComputed) {
    const double e = std::exp(1.0);
    EXPECT_NEAR(contribution(0.0, 1.0), e / (e + 1), 1e-12);
    EXPECT_NEAR(contribution(0.0, 1.0), 0.731059, 1e-6);
    EXPECT_EQ(contribution(2.5, 2.5), 0.5);
    EXPECT_NEAR(contribution(1.0, 0.0), 1 - e / (e + 1), 1e-12);
    EXPECT_EQ(contribution(-1000.0, 1000.0), 1.0);
    EXPECT_EQ(contribution(1000.0, -1000.0), 0.0);
}

TEST(SoftScore, OneHotSelectsColumnAndUniformAverages) {
    const auto z = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});  // d = 2, K = 3
    const auto v = soft_score_embedding(Tensor::matrix({{0, 1, 0}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}), z);
    EXPECT_EQ(v.shape(), (Shape{2, 2}));
    EXPECT_DOUBLE_EQ(v.at(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(v.at(0, 1), 5.0);
    EXPECT_NEAR(v.at(1, 0), 2.0, 1e-15);
    EXPECT_NEAR(v.at(1, 1), 5.0, 1e-15);
    EXPECT_THROW(soft_score_embedding(Tensor::zeros({1, 2}), z), DimensionError);
}

TEST(UarHead, ZeroOutputLayerGivesUniform) {
    AsapModel m(small(true, 5), 1);
    for (auto* name : {"uar_head.output.weight", "uar_head.output.bias"})
        for (auto& v : param(m, name).mutable_values()) v = 0.0;
    const auto p = m.uar_head(Tensor::full({3, 8}, 0.7), {});
    for (double v : p.values()) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(UarHead, BiasOnlyLogitsHandComputed) {
    AsapModel m(small(true, 2), 1);
    for (auto& v : param(m, "uar_head.output.weight").mutable_values()) v = 0.0;
    auto bias = param(m, "uar_head.output.bias").mutable_values();
    bias[0] = std::log(3.0);
    bias[1] = 0.0;
    const auto p = m.uar_head(Tensor::full({1, 8}, -0.3), {});
    EXPECT_NEAR(p.at(0, 0), 0.75, 1e-12);
    EXPECT_NEAR(p.at(0, 1), 0.25, 1e-12);
}

TEST(UarHead, AbsentWithoutActions) {
    AsapModel m(small(true, 0), 1);
    EXPECT_THROW(m.uar_head(Tensor::zeros({1, 8}), {}), ContractError);
    const auto out = m.forward(Tensor::zeros({2, 8}), {});
    EXPECT_FALSE(out.p_uar.defined());
}

TEST(ModelConfigTest, ValidationRejectsBadValues) {
    auto c = small();
    c.num_actions = 1;
    EXPECT_THROW(AsapModel(c, 1), ConfigError);
    c = small();
    c.beta = 0.0;
    EXPECT_THROW(AsapModel(c, 1), ConfigError);
    c = small();
    c.score_encoder.d_model = 16;
    EXPECT_THROW(AsapModel(c, 1), ConfigError);
    c.hawkes = false;
    EXPECT_NO_THROW(AsapModel(c, 1));
}

TEST(Forward, ShapesAndErrors) {
    AsapModel m(small(true, 3), 2);
    const auto out = m.forward(Tensor::full({4, 8}, 0.1), {});
    EXPECT_EQ(out.intensity.shape(), (Shape{4, 3}));
    EXPECT_EQ(out.p_uar.shape(), (Shape{4, 3}));
    EXPECT_EQ(out.state.shape(), (Shape{4, 8}));
    EXPECT_THROW(m.forward(Tensor::zeros({4, 7}), {}), ConfigError);
    const auto ds = corpus(3);
    auto est = small_estimator(ds);
    EXPECT_THROW(est.forward(DialogueSession{"empty", {}}, {}), ContractError);
}

TEST(Forward, IntensityRowsAreDistributions) {
    const auto ds = corpus(20);
    const auto est = small_estimator(ds);
    for (const auto& d : ds)
        for (const auto& p : est.predict(d)) {
            EXPECT_NEAR(std::accumulate(p.intensity.begin(), p.intensity.end(), 0.0), 1.0, 1e-9);
            for (double v : p.intensity) EXPECT_GT(v, 0.0);
            ASSERT_TRUE(p.contribution.has_value());
            EXPECT_GE(*p.contribution, 0.0);
            EXPECT_LE(*p.contribution, 1.0);
        }
}

TEST(Causality, PrefixPredictionsMatchFullDialogue) {
    const auto ds = corpus(50);
    const auto est = small_estimator(ds);
    for (const auto& d : ds) {
        const auto full = est.predict(d);
        for (std::size_t t = 1; t <= d.size(); ++t) {
            const auto prefix = est.predict(d.prefix(t));
            const auto& a = prefix.back();
            const auto& b = full[t - 1];
            for (std::size_t k = 0; k < a.intensity.size(); ++k) EXPECT_NEAR(a.intensity[k], b.intensity[k], 1e-9);
            EXPECT_EQ(a.predicted_class, b.predicted_class);
        }
    }
}

TEST(Ablation, BaseEstimatorPredictsFromUseDistribution) {
    const auto ds = corpus(10);
    const auto est = small_estimator(ds, false);
    for (const auto& e : est.model().parameters().entries()) {
        EXPECT_EQ(e.name.find("score"), std::string::npos) << e.name;
        EXPECT_EQ(e.name.find("intensity"), std::string::npos) << e.name;
    }
    for (const auto& d : ds)
        for (const auto& p : est.predict(d)) {
            EXPECT_TRUE(p.intensity.empty());
            EXPECT_FALSE(p.contribution.has_value());
            EXPECT_EQ(p.predicted_class,
                      static_cast<std::size_t>(std::max_element(p.p_use.begin(), p.p_use.end()) - p.p_use.begin()));
        }
}

TEST(Ablation, SharedParametersStartIdentical) {
    AsapModel full(small(true), 9);
    AsapModel base(small(false), 9);
    for (const auto& e : base.parameters().entries()) {
        const auto* other = full.parameters().find(e.name);
        ASSERT_NE(other, nullptr) << e.name;
        EXPECT_TRUE(std::equal(e.tensor.values().begin(), e.tensor.values().end(), other->tensor.values().begin()))
            << e.name;
    }
}

// The use head reaches the loss only through v_t = Z p_use_t, so its gradient
// being nonzero shows the score path feeds back into the turn-level estimate.
TEST(Gradients, SatisfactionLossReachesUseHeadThroughScorePath) {
    const auto ds = corpus(5);
    auto est = small_estimator(ds);
    const auto labels = satisfaction_labels(ds[0]);
    backward(loss_use(est.forward(ds[0], {}).intensity, labels));
    for (const auto& e : est.model().parameters().entries()) {
        if (e.name.rfind("use_head.", 0) != 0) continue;
        double norm = 0.0;
        for (double g : e.tensor.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0) << e.name;
    }
}

TEST(Gradients, EveryParameterReceivesGradientInJointLoss) {
    const auto ds = corpus(5, 4);
    auto est = small_estimator(ds, true, 4);
    auto cfg = est.config();
    ASSERT_EQ(cfg.num_actions, 4u);
    ModelConfig with_gamma = cfg;
    with_gamma.gamma = 0.5;
    ProviderConfig provider;
    provider.min_count = 1;
    auto joint = make_estimator(with_gamma, provider, ds, 42);
    const auto loss = dialogue_loss(joint, ds[0], {});
    ASSERT_TRUE(loss.joint.defined());
    backward(loss.joint);
    const auto params = joint.all_parameters();
    for (const auto& e : params.entries()) {
        if (e.name == BagOfTokensEncoder::kTableName) continue;  // rows of unused tokens stay at zero
        double norm = 0.0;
        for (double g : e.tensor.grad()) norm += g * g;
        EXPECT_GT(norm, 0.0) << e.name;
    }
}

// Relabelling classes consistently across every K-sized axis permutes the intensity columns.
TEST(Equivariance, ClassPermutationPermutesIntensity) {
    AsapModel m(small(true), 4);
    const std::vector<std::size_t> perm{2, 0, 1};
    const Tensor h = Tensor::from({3, 8}, [] {
        std::vector<double> v(24);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(0.7 * static_cast<double>(i));
        return v;
    }());
    const auto before = m.forward(h, {}).intensity;

    const auto permute_columns = [&](Tensor& t) {
        auto v = t.mutable_values();
        const std::size_t cols = t.rank() == 1 ? t.dim(0) : t.dim(1);
        const std::size_t rows = v.size() / cols;
        std::vector<double> copy(v.begin(), v.end());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t k = 0; k < cols; ++k) v[r * cols + perm[k]] = copy[r * cols + k];
    };
    for (const char* name : {"use_head.output.weight", "use_head.output.bias", "score.embeddings",
                             "intensity.context.output.weight", "intensity.context.output.bias",
                             "intensity.state.output.weight", "intensity.state.output.bias"})
        permute_columns(param(m, name));

    const auto after = m.forward(h, {}).intensity;
    for (std::size_t t = 0; t < 3; ++t)
        for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(after.at(t, perm[k]), before.at(t, k), 1e-12);
}

TEST(Dropout, TrainingForwardIsStochasticAndInferenceIsNot) {
    auto cfg = ModelConfig::desk();
    AsapModel m(cfg, 3);
    const auto h = Tensor::full({3, 64}, 0.2);
    EXPECT_EQ(row(m.forward(h, {}).intensity, 2), row(m.forward(h, {}).intensity, 2));
    Rng rng(1);
    const auto a = row(m.forward(h, {true, &rng}).intensity, 2);
    const auto b = row(m.forward(h, {true, &rng}).intensity, 2);
    EXPECT_NE(a, b);
}
