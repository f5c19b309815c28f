#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace asap {

/// K x K counts, rows = gold, columns = predicted.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0);

    void add(std::size_t gold, std::size_t predicted);
    std::size_t at(std::size_t gold, std::size_t predicted) const;
    std::size_t num_classes() const { return k_; }
    std::size_t total() const { return total_; }
    std::size_t trace() const;
    std::size_t gold_count(std::size_t cls) const;
    std::size_t predicted_count(std::size_t cls) const;

private:
    std::size_t k_;
    std::vector<std::size_t> counts_;
    std::size_t total_ = 0;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct DepthRow {
    std::size_t turn = 0;  // 1-based
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t support = 0;
};

/// Per-turn-depth table. Rows below the minimum depth are dropped but still counted in the totals.
struct TurnBreakdown {
    std::vector<DepthRow> rows;
    std::size_t total_support = 0;
    std::size_t suppressed_support = 0;
    std::size_t min_turn = 4;
};

/// min / quartiles / mean of a sample (quartiles by linear interpolation).
struct DistributionSummary {
    std::size_t count = 0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
    double mean = 0.0;
};

struct PairedTTest {
    double t = 0.0;
    double p = 1.0;
    std::size_t n = 0;
    /// Zero-variance differences: t reported as 0 (all zero) or +-inf, p as 1 or 0.
    bool degenerate = false;
};

struct EvalReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    std::vector<ClassMetrics> per_class;
    ConfusionMatrix confusion;
    std::optional<TurnBreakdown> per_turn;
    std::optional<DistributionSummary> contribution;
    std::optional<PairedTTest> comparison;

    nlohmann::json to_json() const;
    /// Header plus one "overall" row, then one row per reported turn depth.
    std::string to_csv() const;
};

/// Classes absent from both gold and predictions contribute zeros to the macro means.
/// ContractError on length mismatch, empty input, or labels outside 0..K-1.
EvalReport evaluate(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                    std::size_t num_classes);

TurnBreakdown per_turn_breakdown(std::span<const std::size_t> turn_indices, std::span<const std::size_t> predictions,
                                 std::span<const std::size_t> golds, std::size_t num_classes,
                                 std::size_t min_turn = 4);

/// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

DistributionSummary summarize(std::span<const double> values);

}  // namespace asap
