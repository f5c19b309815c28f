#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include "asap/errors.hpp"
#include "asap/training.hpp"
#include "asap/utterance.hpp"

namespace asap {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

std::vector<ParameterCheck> check_gradients(const std::function<Tensor()>& loss_fn, ParameterStore& params,
                                            double step) {
    params.zero_grad();
    backward(loss_fn());

    std::vector<ParameterCheck> checks;
    for (auto& p : params.entries()) {
        ParameterCheck check;
        check.name = p.name;
        const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
        auto values = p.tensor.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + step;
            const double plus = loss_fn().item();
            values[i] = saved - step;
            const double minus = loss_fn().item();
            values[i] = saved;
            const double numeric = (plus - minus) / (2.0 * step);
            const double err = relative_error(analytic[i], numeric);
            if (err > check.max_rel_error || i == 0) {
                check.max_rel_error = std::max(check.max_rel_error, err);
                check.worst_index = i;
                check.analytic = analytic[i];
                check.numeric = numeric;
            }
        }
        checks.push_back(std::move(check));
    }
    return checks;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so the relu kink stays outside the stencil.
Tensor away_from_zero(Shape shape, Rng& rng) {
    std::uniform_real_distribution<double> u(0.1, 1.0);
    std::bernoulli_distribution sign(0.5);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = sign(rng) ? u(rng) : -u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Reduces an op output to a scalar with fixed random weights so every output
// entry contributes a distinct cotangent.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
    if (y.rank() == 0) return y;
    Rng rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> w(y.numel());
    for (auto& x : w) x = u(rng);
    return sum(mul(y, Tensor::from(y.shape(), std::move(w))));
}

struct OpCase {
    std::string name;
    std::vector<Tensor> inputs;
    std::function<Tensor(const std::vector<Tensor>&)> apply;
};

std::vector<OpCase> op_cases(std::uint64_t seed) {
    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> size(2, 5);
    const std::size_t m = size(rng), n = size(rng), k = size(rng);

    std::vector<OpCase> cases;
    cases.push_back({"matmul", {random_tensor({m, k}, rng), random_tensor({k, n}, rng)},
                     [](const auto& x) { return matmul(x[0], x[1]); }});
    cases.push_back({"add", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                     [](const auto& x) { return add(x[0], x[1]); }});
    cases.push_back({"add_broadcast", {random_tensor({m, n}, rng), random_tensor({n}, rng)},
                     [](const auto& x) { return add(x[0], x[1]); }});
    cases.push_back({"sub", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                     [](const auto& x) { return sub(x[0], x[1]); }});
    cases.push_back({"mul", {random_tensor({m, n}, rng), random_tensor({m, n}, rng)},
                     [](const auto& x) { return mul(x[0], x[1]); }});
    cases.push_back({"scale", {random_tensor({m, n}, rng)}, [](const auto& x) { return scale(x[0], -1.7); }});
    cases.push_back({"relu", {away_from_zero({m, n}, rng)}, [](const auto& x) { return relu(x[0]); }});
    const double beta = std::uniform_real_distribution<double>(0.5, 2.0)(rng);
    cases.push_back({"softplus", {random_tensor({m, n}, rng, -3.0, 3.0)},
                     [beta](const auto& x) { return softplus(x[0], beta); }});
    cases.push_back({"log", {random_tensor({m, n}, rng, 0.5, 2.0)}, [](const auto& x) { return log(x[0]); }});
    cases.push_back({"exp", {random_tensor({m, n}, rng)}, [](const auto& x) { return exp(x[0]); }});
    cases.push_back({"softmax", {random_tensor({m, n}, rng, -2.0, 2.0)},
                     [](const auto& x) { return softmax(x[0], -1); }});
    cases.push_back({"softmax_axis0", {random_tensor({m, n}, rng, -2.0, 2.0)},
                     [](const auto& x) { return softmax(x[0], 0); }});
    cases.push_back({"causal_softmax", {random_tensor({m, m}, rng, -2.0, 2.0)},
                     [](const auto& x) { return causal_softmax(x[0]); }});
    cases.push_back({"layer_norm", {random_tensor({m, n}, rng, -2.0, 2.0), random_tensor({n}, rng), random_tensor({n}, rng)},
                     [](const auto& x) { return layer_norm(x[0], x[1], x[2]); }});
    const std::uint64_t mask_seed = rng();
    cases.push_back({"dropout", {random_tensor({m, n}, rng)}, [mask_seed](const auto& x) {
                         Rng mask(mask_seed);
                         return dropout(x[0], 0.3, true, &mask);
                     }});
    cases.push_back({"concat_rows", {random_tensor({m, n}, rng), random_tensor({k, n}, rng)},
                     [](const auto& x) { return concat({x[0], x[1]}, 0); }});
    cases.push_back({"concat_cols", {random_tensor({m, n}, rng), random_tensor({m, k}, rng)},
                     [](const auto& x) { return concat({x[0], x[1]}, 1); }});
    cases.push_back({"slice", {random_tensor({m, n + 2}, rng)}, [n](const auto& x) { return slice(x[0], 1, 1, n); }});
    cases.push_back({"transpose", {random_tensor({m, n}, rng)}, [](const auto& x) { return transpose(x[0]); }});
    cases.push_back({"sum", {random_tensor({m, n}, rng)}, [](const auto& x) { return scale(sum(x[0]), 0.7); }});
    cases.push_back({"mean", {random_tensor({m, n}, rng)}, [](const auto& x) { return scale(mean(x[0]), 0.7); }});

    std::uniform_int_distribution<std::size_t> row(0, k - 1);
    std::vector<std::vector<std::size_t>> bags(m);
    for (std::size_t b = 0; b < m; ++b)
        for (std::size_t j = 0; j < b % 4; ++j) bags[b].push_back(row(rng));
    cases.push_back({"embedding_bag", {random_tensor({k, n}, rng)},
                     [bags](const auto& x) { return embedding_bag(x[0], bags); }});

    std::vector<std::optional<std::size_t>> targets(m);
    std::uniform_int_distribution<std::size_t> cls(0, n - 1);
    for (std::size_t r = 0; r < m; ++r)
        if (r == 0 || rng() % 3 != 0) targets[r] = cls(rng);
    cases.push_back({"nll", {random_tensor({m, n}, rng, 0.2, 1.0)},
                     [targets](const auto& x) { return nll(x[0], targets); }});
    return cases;
}

}  // namespace

std::vector<OpCheck> check_primitive_ops(std::uint64_t seed, double step, double tolerance) {
    std::vector<OpCheck> out;
    std::uint64_t weight_seed = seed * 7919 + 17;
    for (auto& c : op_cases(seed)) {
        ParameterStore store;
        for (std::size_t i = 0; i < c.inputs.size(); ++i) store.add("x" + std::to_string(i), c.inputs[i], true);
        const auto inputs = c.inputs;
        const auto ws = weight_seed++;
        const auto checks = check_gradients([&] { return weighted_sum(c.apply(inputs), ws); }, store, step);
        OpCheck check;
        check.op = c.name;
        for (const auto& p : checks) check.max_rel_error = std::max(check.max_rel_error, p.max_rel_error);
        check.passed = check.max_rel_error < tolerance;
        out.push_back(check);
    }
    return out;
}

nlohmann::json GradcheckReport::to_json() const {
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : parameters)
        params.push_back({{"name", p.name},
                          {"max_rel_error", p.max_rel_error},
                          {"worst_index", p.worst_index},
                          {"analytic", p.analytic},
                          {"numeric", p.numeric}});
    nlohmann::json op_list = nlohmann::json::array();
    for (const auto& o : ops) op_list.push_back({{"op", o.op}, {"max_rel_error", o.max_rel_error}, {"passed", o.passed}});
    return {{"passed", passed},
            {"max_rel_error", max_rel_error},
            {"worst_parameter", worst_parameter},
            {"tolerance", tolerance},
            {"failing_parameters", failing_parameters},
            {"failing_ops", failing_ops},
            {"seconds", seconds},
            {"parameters", params},
            {"ops", op_list}};
}

GradcheckReport gradcheck(const ModelConfig& config, const GradcheckOptions& options) {
    config.validate();
    if (options.turns == 0) throw ConfigError("gradcheck: turns must be positive");
    const auto start = std::chrono::steady_clock::now();

    DialogueSession dialogue;
    dialogue.id = "gradcheck";
    Rng label_rng(options.seed);
    for (std::size_t t = 0; t < options.turns; ++t) {
        Turn turn;
        turn.system = "system turn " + std::to_string(t);
        turn.user = "user turn " + std::to_string(t);
        turn.satisfaction = label_rng() % config.num_classes;
        if (config.num_actions > 0) turn.action = label_rng() % config.num_actions;
        dialogue.turns.push_back(std::move(turn));
    }
    auto store = std::make_shared<const EmbeddingStore>(
        random_embedding_store({dialogue}, config.d_model, options.seed + 1));
    Estimator estimator(config, std::make_unique<FileEmbeddingProvider>(store), options.seed);
    ParameterStore params = estimator.all_parameters();

    const ForwardContext ctx{false, nullptr};
    auto loss_fn = [&] {
        auto loss = dialogue_loss(estimator, dialogue, ctx);
        if (!loss.joint.defined()) throw ContractError("gradcheck: dialogue produced no loss");
        return loss.joint;
    };

    GradcheckReport report;
    report.tolerance = options.tolerance;
    report.parameters = check_gradients(loss_fn, params, options.step);
    for (const auto& p : report.parameters) {
        if (p.max_rel_error >= report.max_rel_error) {
            report.max_rel_error = p.max_rel_error;
            report.worst_parameter = p.name;
        }
        if (!(p.max_rel_error < options.tolerance)) report.failing_parameters.push_back(p.name);
    }
    if (options.check_ops) {
        report.ops = check_primitive_ops(options.seed, options.step, options.tolerance);
        for (const auto& o : report.ops)
            if (!o.passed) report.failing_ops.push_back(o.op);
    }
    report.passed = report.failing_parameters.empty() && report.failing_ops.empty();
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace asap
