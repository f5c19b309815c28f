#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "asap/tensor.hpp"

namespace asap::test {

inline Tensor random_leaf(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = u(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

// Central differences of f with respect to every entry of x, computed here
// rather than through the library so the oracle stays independent.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& x, double h = 1e-4) {
    auto v = x.mutable_values();
    std::vector<double> g(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double saved = v[i];
        v[i] = saved + h;
        const double plus = f();
        v[i] = saved - h;
        const double minus = f();
        v[i] = saved;
        g[i] = (plus - minus) / (2 * h);
    }
    return g;
}

inline double max_rel_err(std::span<const double> a, const std::vector<double>& b, double floor = 1e-8) {
    double worst = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max({std::abs(a[i]), std::abs(b[i]), floor}));
    return worst;
}

}  // namespace asap::test
