#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "asap/errors.hpp"
#include "asap/metrics.hpp"

using namespace asap;

using Labels = std::vector<std::size_t>;

TEST(Evaluate, HandComputedConfusion) {
    const Labels preds{1, 1, 2, 0}, golds{1, 2, 2, 0};
    const auto r = evaluate(preds, golds, 3);
    EXPECT_NEAR(r.accuracy, 0.75, 1e-9);
    EXPECT_NEAR(r.macro_precision, (1 + 0.5 + 1) / 3.0, 1e-9);
    EXPECT_NEAR(r.macro_recall, (1 + 1 + 0.5) / 3.0, 1e-9);
    EXPECT_NEAR(r.macro_f1, (1 + 2.0 / 3 + 2.0 / 3) / 3.0, 1e-9);
    EXPECT_EQ(r.confusion.at(2, 1), 1u);
    EXPECT_EQ(r.confusion.trace(), 3u);
    EXPECT_EQ(r.per_class[2].support, 2u);
}

TEST(Evaluate, PerfectPredictions) {
    const Labels y{0, 1, 2, 2, 1};
    const auto r = evaluate(y, y, 3);
    EXPECT_EQ(r.accuracy, 1.0);
    EXPECT_EQ(r.macro_precision, 1.0);
    EXPECT_EQ(r.macro_recall, 1.0);
    EXPECT_EQ(r.macro_f1, 1.0);
}

TEST(Evaluate, SingleClassPredictionsOnBalancedGold) {
    const Labels preds{0, 0, 0}, golds{0, 1, 2};
    const auto r = evaluate(preds, golds, 3);
    EXPECT_NEAR(r.accuracy, 1.0 / 3, 1e-9);
    EXPECT_NEAR(r.macro_f1, 2.0 * (1.0 / 3) * 1.0 / ((1.0 / 3) + 1.0) / 3, 1e-9);
    EXPECT_NEAR(r.macro_f1, 1.0 / 6, 1e-9);
}

TEST(Evaluate, AbsentClassContributesZero) {
    const Labels y{0, 1, 0, 1};
    const auto r = evaluate(y, y, 3);
    EXPECT_NEAR(r.macro_f1, 2.0 / 3, 1e-12);
}

TEST(Evaluate, ContractViolations) {
    const Labels a{0, 1}, b{0};
    EXPECT_THROW(evaluate(a, b, 3), ContractError);
    EXPECT_THROW(evaluate(Labels{}, Labels{}, 3), ContractError);
    EXPECT_THROW(evaluate(Labels{3}, Labels{0}, 3), ContractError);
}

TEST(Evaluate, InvariantUnderPairPermutation) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<std::size_t> cls(0, 2);
    Labels p(200), g(200);
    for (std::size_t i = 0; i < 200; ++i) p[i] = cls(rng), g[i] = cls(rng);
    const auto before = evaluate(p, g, 3);
    std::vector<std::size_t> order(200);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    Labels p2(200), g2(200);
    for (std::size_t i = 0; i < 200; ++i) p2[i] = p[order[i]], g2[i] = g[order[i]];
    const auto after = evaluate(p2, g2, 3);
    EXPECT_EQ(before.accuracy, after.accuracy);
    EXPECT_EQ(before.macro_f1, after.macro_f1);
    EXPECT_EQ(before.macro_precision, after.macro_precision);
}

TEST(Evaluate, ClassRelabelingPermutesPerClassMetrics) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> cls(0, 2);
    Labels p(100), g(100);
    for (std::size_t i = 0; i < 100; ++i) p[i] = cls(rng), g[i] = cls(rng);
    const std::size_t perm[3] = {2, 0, 1};
    Labels p2(100), g2(100);
    for (std::size_t i = 0; i < 100; ++i) p2[i] = perm[p[i]], g2[i] = perm[g[i]];
    const auto a = evaluate(p, g, 3);
    const auto b = evaluate(p2, g2, 3);
    EXPECT_NEAR(a.macro_f1, b.macro_f1, 1e-15);
    EXPECT_NEAR(a.macro_precision, b.macro_precision, 1e-15);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(a.per_class[c].f1, b.per_class[perm[c]].f1);
}

TEST(PerTurn, SingleDepthEqualsOverall) {
    const Labels turns{1, 1, 1, 1}, preds{1, 1, 2, 0}, golds{1, 2, 2, 0};
    const auto t = per_turn_breakdown(turns, preds, golds, 3, 1);
    ASSERT_EQ(t.rows.size(), 1u);
    const auto overall = evaluate(preds, golds, 3);
    EXPECT_EQ(t.rows[0].accuracy, overall.accuracy);
    EXPECT_EQ(t.rows[0].macro_f1, overall.macro_f1);
    EXPECT_EQ(t.rows[0].support, 4u);
}

TEST(PerTurn, ShallowDepthsSuppressedButCounted) {
    const Labels turns{1, 2, 3, 3}, preds{0, 1, 2, 0}, golds{0, 1, 2, 2};
    const auto t = per_turn_breakdown(turns, preds, golds, 3);
    EXPECT_TRUE(t.rows.empty());
    EXPECT_EQ(t.total_support, 4u);
    EXPECT_EQ(t.suppressed_support, 4u);
}

TEST(PerTurn, DepthsWithoutSupportAreOmitted) {
    const Labels turns{4, 4, 6}, preds{0, 1, 2}, golds{0, 0, 2};
    const auto t = per_turn_breakdown(turns, preds, golds, 3);
    ASSERT_EQ(t.rows.size(), 2u);
    EXPECT_EQ(t.rows[0].turn, 4u);
    EXPECT_EQ(t.rows[1].turn, 6u);
    EXPECT_EQ(t.rows[0].accuracy, 0.5);
    EXPECT_THROW(per_turn_breakdown(Labels{0}, Labels{0}, Labels{0}, 3), ContractError);
}

TEST(PairedT, HandComputedExample) {
    const std::vector<double> a{1, -1, 2, 0}, b{0, 0, 0, 0};
    const auto r = paired_t_test(a, b);
    EXPECT_NEAR(r.t, 0.7746, 1e-3);
    EXPECT_NEAR(r.p, 0.495, 1e-3);
    // Reference values from an independent statistics package.
    EXPECT_NEAR(r.t, 0.7745966692414834, 1e-12);
    EXPECT_NEAR(r.p, 0.495025346059711, 1e-9);
    EXPECT_EQ(r.n, 4u);
    EXPECT_FALSE(r.degenerate);
}

TEST(PairedT, DegenerateCases) {
    const std::vector<double> a{0.3, 0.5, 0.7};
    const auto same = paired_t_test(a, a);
    EXPECT_TRUE(same.degenerate);
    EXPECT_EQ(same.p, 1.0);
    EXPECT_EQ(same.t, 0.0);

    const std::vector<double> ones{1, 1, 1, 1}, zeros{0, 0, 0, 0};
    const auto shifted = paired_t_test(ones, zeros);
    EXPECT_TRUE(shifted.degenerate);
    EXPECT_TRUE(std::isinf(shifted.t) && shifted.t > 0);
    EXPECT_EQ(shifted.p, 0.0);

    EXPECT_THROW(paired_t_test(std::vector<double>{1}, std::vector<double>{0}), ContractError);
    EXPECT_THROW(paired_t_test(ones, a), ContractError);
}

TEST(PairedT, SwappingSamplesNegatesT) {
    const std::vector<double> a{0.9, 0.4, 0.7, 0.8, 0.55}, b{0.6, 0.5, 0.65, 0.7, 0.5};
    const auto ab = paired_t_test(a, b);
    const auto ba = paired_t_test(b, a);
    EXPECT_NEAR(ab.t, -ba.t, 1e-15);
    EXPECT_NEAR(ab.p, ba.p, 1e-15);
    EXPECT_GT(ab.p, 0.0);
    EXPECT_LT(ab.p, 1.0);
}

TEST(Summary, QuartilesByLinearInterpolation) {
    const std::vector<double> v{4, 1, 3, 2, 5};
    const auto s = summarize(v);
    EXPECT_EQ(s.count, 5u);
    EXPECT_EQ(s.min, 1.0);
    EXPECT_EQ(s.q1, 2.0);
    EXPECT_EQ(s.median, 3.0);
    EXPECT_EQ(s.q3, 4.0);
    EXPECT_EQ(s.max, 5.0);
    EXPECT_EQ(s.mean, 3.0);
    EXPECT_DOUBLE_EQ(summarize(std::vector<double>{0, 1}).q1, 0.25);
    EXPECT_EQ(summarize(std::vector<double>{}).count, 0u);
}

TEST(Report, JsonAndCsvCarryHeadlineMetrics) {
    const Labels preds{1, 1, 2, 0}, golds{1, 2, 2, 0};
    auto r = evaluate(preds, golds, 3);
    r.per_turn = per_turn_breakdown(Labels{4, 4, 5, 5}, preds, golds, 3);
    const auto j = r.to_json();
    EXPECT_DOUBLE_EQ(j["accuracy"].get<double>(), 0.75);
    EXPECT_EQ(j["confusion"][2][1].get<int>(), 1);
    EXPECT_EQ(j["per_turn"]["rows"].size(), 2u);
    const auto csv = r.to_csv();
    EXPECT_EQ(csv.rfind("scope,turn,accuracy,macro_precision,macro_recall,macro_f1,support\noverall,,0.75,", 0), 0u);
    EXPECT_NE(csv.find("depth,5,"), std::string::npos);
}
