#include "asap/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "asap/errors.hpp"

namespace asap {

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::size_t gold, std::size_t predicted) {
    if (gold >= k_ || predicted >= k_) throw ContractError("confusion matrix: label out of range");
    ++counts_[gold * k_ + predicted];
    ++total_;
}

std::size_t ConfusionMatrix::at(std::size_t gold, std::size_t predicted) const {
    return counts_.at(gold * k_ + predicted);
}

std::size_t ConfusionMatrix::trace() const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += counts_[i * k_ + i];
    return s;
}

std::size_t ConfusionMatrix::gold_count(std::size_t cls) const {
    std::size_t s = 0;
    for (std::size_t j = 0; j < k_; ++j) s += counts_[cls * k_ + j];
    return s;
}

std::size_t ConfusionMatrix::predicted_count(std::size_t cls) const {
    std::size_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += counts_[i * k_ + cls];
    return s;
}

EvalReport evaluate(std::span<const std::size_t> predictions, std::span<const std::size_t> golds,
                    std::size_t num_classes) {
    if (predictions.size() != golds.size())
        throw ContractError("evaluate: " + std::to_string(predictions.size()) + " predictions vs " +
                            std::to_string(golds.size()) + " gold labels");
    if (predictions.empty()) throw ContractError("evaluate: no predictions");
    if (num_classes == 0) throw ContractError("evaluate: K must be >= 1");

    EvalReport r;
    r.confusion = ConfusionMatrix(num_classes);
    for (std::size_t i = 0; i < golds.size(); ++i) r.confusion.add(golds[i], predictions[i]);

    const auto& cm = r.confusion;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
    r.per_class.resize(num_classes);
    for (std::size_t c = 0; c < num_classes; ++c) {
        auto& m = r.per_class[c];
        const auto tp = static_cast<double>(cm.at(c, c));
        const auto predicted = cm.predicted_count(c);
        m.support = cm.gold_count(c);
        m.precision = predicted ? tp / static_cast<double>(predicted) : 0.0;
        m.recall = m.support ? tp / static_cast<double>(m.support) : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
    }
    const auto k = static_cast<double>(num_classes);
    r.macro_precision /= k;
    r.macro_recall /= k;
    r.macro_f1 /= k;
    return r;
}

TurnBreakdown per_turn_breakdown(std::span<const std::size_t> turn_indices, std::span<const std::size_t> predictions,
                                 std::span<const std::size_t> golds, std::size_t num_classes, std::size_t min_turn) {
    if (turn_indices.size() != predictions.size() || predictions.size() != golds.size())
        throw ContractError("per_turn_breakdown: input lengths differ");
    std::map<std::size_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> groups;
    for (std::size_t i = 0; i < turn_indices.size(); ++i) {
        if (turn_indices[i] == 0) throw ContractError("per_turn_breakdown: turn indices are 1-based");
        auto& [p, g] = groups[turn_indices[i]];
        p.push_back(predictions[i]);
        g.push_back(golds[i]);
    }
    TurnBreakdown out;
    out.min_turn = min_turn;
    out.total_support = turn_indices.size();
    for (const auto& [turn, pg] : groups) {
        if (turn < min_turn) {
            out.suppressed_support += pg.first.size();
            continue;
        }
        const auto r = evaluate(pg.first, pg.second, num_classes);
        out.rows.push_back({turn, r.accuracy, r.macro_f1, pg.first.size()});
    }
    return out;
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ContractError("paired_t_test: samples differ in length");
    if (a.size() < 2) throw ContractError("paired_t_test: need at least two pairs");
    const std::size_t n = a.size();
    std::vector<double> diff(n);
    for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
    const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double d : diff) ss += (d - mean) * (d - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));

    PairedTTest out;
    out.n = n;
    if (sd == 0.0) {
        out.degenerate = true;
        if (mean == 0.0) {
            out.t = 0.0;
            out.p = 1.0;
        } else {
            out.t = mean > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            out.p = 0.0;
        }
        return out;
    }
    out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    const boost::math::students_t dist(static_cast<double>(n - 1));
    out.p = std::clamp(2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t))), 0.0, 1.0);
    return out;
}

DistributionSummary summarize(std::span<const double> values) {
    DistributionSummary s;
    s.count = values.size();
    if (values.empty()) return s;
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    s.min = v.front();
    s.max = v.back();
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    return s;
}

// ---------------------------------------------------------------------------
// Serialisation

nlohmann::json EvalReport::to_json() const {
    using nlohmann::json;
    json j;
    j["accuracy"] = accuracy;
    j["macro_precision"] = macro_precision;
    j["macro_recall"] = macro_recall;
    j["macro_f1"] = macro_f1;
    j["num_turns"] = confusion.total();
    json classes = json::array();
    for (std::size_t c = 0; c < per_class.size(); ++c)
        classes.push_back({{"class", c},
                           {"precision", per_class[c].precision},
                           {"recall", per_class[c].recall},
                           {"f1", per_class[c].f1},
                           {"support", per_class[c].support}});
    j["per_class"] = std::move(classes);
    json cm = json::array();
    for (std::size_t g = 0; g < confusion.num_classes(); ++g) {
        json row = json::array();
        for (std::size_t p = 0; p < confusion.num_classes(); ++p) row.push_back(confusion.at(g, p));
        cm.push_back(std::move(row));
    }
    j["confusion"] = std::move(cm);
    if (per_turn) {
        json rows = json::array();
        for (const auto& r : per_turn->rows)
            rows.push_back({{"turn", r.turn}, {"accuracy", r.accuracy}, {"macro_f1", r.macro_f1}, {"support", r.support}});
        j["per_turn"] = {{"min_turn", per_turn->min_turn},
                         {"total_support", per_turn->total_support},
                         {"suppressed_support", per_turn->suppressed_support},
                         {"rows", std::move(rows)}};
    }
    if (contribution)
        j["contribution"] = {{"count", contribution->count}, {"min", contribution->min},   {"q1", contribution->q1},
                             {"median", contribution->median}, {"q3", contribution->q3}, {"max", contribution->max},
                             {"mean", contribution->mean}};
    if (comparison) {
        auto finite_or_null = [](double v) { return std::isfinite(v) ? json(v) : json(v > 0 ? "inf" : "-inf"); };
        j["paired_t_test"] = {{"t", finite_or_null(comparison->t)},
                              {"p_value", comparison->p},
                              {"n", comparison->n},
                              {"degenerate", comparison->degenerate}};
    }
    return j;
}

std::string EvalReport::to_csv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "scope,turn,accuracy,macro_precision,macro_recall,macro_f1,support\n";
    os << "overall,," << accuracy << ',' << macro_precision << ',' << macro_recall << ',' << macro_f1 << ','
       << confusion.total() << '\n';
    if (per_turn)
        for (const auto& r : per_turn->rows)
            os << "depth," << r.turn << ',' << r.accuracy << ",,," << r.macro_f1 << ',' << r.support << '\n';
    return os.str();
}

}  // namespace asap
