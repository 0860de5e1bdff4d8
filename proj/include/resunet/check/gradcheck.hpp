#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "resunet/tensor.hpp"

namespace resunet::check {

inline constexpr double kFiniteDifferenceStep = 1e-3;

/// |a - n| / max(|a|, |n|, floor). The floor keeps exactly-zero gradients
/// from producing 0/0.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

struct GradCheckResult {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;

    bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

/// Agreement required between the step-h and step-h/2 probes before a
/// coordinate counts as smooth.
inline constexpr double kKinkThreshold = 1e-4;

/// Central finite differences of `objective` with respect to `values[i]` for
/// every i in `indices`, compared against `analytic[i]`. `values` is
/// perturbed in place and restored.
///
/// A ReLU kink inside [x - h, x + h] makes the central difference
/// meaningless. Such coordinates are detected by probing at h and h/2 and
/// are counted in `skipped` instead of `checked`: on a smooth objective the
/// two central differences agree to O(h^2) and the second differences scale
/// by exactly 4, while a derivative jump breaks at least one of the two.
template <typename Objective>
void compare_central_differences(std::span<double> values, std::span<const double> analytic,
                                 const std::vector<std::size_t>& indices, Objective&& objective,
                                 GradCheckResult& result, double step = kFiniteDifferenceStep) {
    for (std::size_t i : indices) {
        const double saved = values[i];
        auto at = [&](double offset) {
            values[i] = saved + offset;
            return objective();
        };
        const double plus = at(step);
        const double minus = at(-step);
        const double half_plus = at(step / 2);
        const double half_minus = at(-step / 2);
        const double center = at(0.0);
        values[i] = saved;
        const double numeric = (plus - minus) / (2.0 * step);
        const double numeric_half = (half_plus - half_minus) / step;
        const double curvature_gap =
            std::abs((plus - 2.0 * center + minus) - 4.0 * (half_plus - 2.0 * center + half_minus)) / step;
        const double scale = std::max({std::abs(numeric), std::abs(numeric_half), 1e-6});
        if (relative_error(numeric, numeric_half) > kKinkThreshold || curvature_gap > kKinkThreshold * scale) {
            ++result.skipped;
            continue;
        }
        result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[i], numeric));
        ++result.checked;
    }
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
}

/// A uniformly random permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx = all_indices(n);
    std::shuffle(idx.begin(), idx.end(), rng);
    return idx;
}

/// Up to `count` distinct indices drawn uniformly from [0, n).
inline std::vector<std::size_t> sample_indices(std::size_t n, std::size_t count, std::mt19937_64& rng) {
    std::vector<std::size_t> idx = all_indices(n);
    if (count >= n) return idx;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Tensor<double> t(s);
    for (auto& v : t.data()) v = dist(rng);
    return t;
}

/// sum(weights * t), the scalar probe used to turn a tensor-valued map into
/// a differentiable objective.
inline double weighted_sum(const Tensor<double>& t, const Tensor<double>& weights) {
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t[i] * weights[i];
    return acc;
}

}  // namespace resunet::check
