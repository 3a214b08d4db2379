#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace kwmatch {

/// |a - n| / max(|a|, |n|, 1e-8)
inline double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

struct GroupCheck {
    std::string name;
    std::size_t coordinates = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GroupCheck> groups;

    double max_rel_error() const {
        double m = 0.0;
        for (const auto& g : groups) m = std::max(m, g.max_rel_error);
        return m;
    }
    std::size_t min_coordinates() const {
        std::size_t m = groups.empty() ? 0 : groups.front().coordinates;
        for (const auto& g : groups) m = std::min(m, g.coordinates);
        return m;
    }
};

/// Compares `analytic` against central differences of `loss` for one
/// parameter group. Groups no larger than `samples` are checked exhaustively;
/// larger groups get `samples` distinct coordinates drawn from `candidates`
/// (all coordinates when `candidates` is empty).
template <typename LossFn, typename Rng>
GroupCheck check_group(const std::string& name, std::span<double> params, std::span<const double> analytic,
                       LossFn&& loss, double step, std::size_t samples, Rng& rng,
                       std::vector<std::size_t> candidates = {}) {
    if (candidates.empty()) {
        candidates.resize(params.size());
        std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    }
    if (candidates.size() > samples) {
        std::shuffle(candidates.begin(), candidates.end(), rng);
        candidates.resize(samples);
    }
    GroupCheck out{name, candidates.size(), 0.0};
    for (auto i : candidates) {
        const double saved = params[i];
        params[i] = saved + step;
        const double up = loss();
        params[i] = saved - step;
        const double down = loss();
        params[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[i], numeric));
    }
    return out;
}

} // namespace kwmatch
