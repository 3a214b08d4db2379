#pragma once

#include <array>
#include <cmath>

namespace kwmatch {

/// Two-class softmax.
template <typename Real>
std::array<Real, 2> softmax2(const std::array<Real, 2>& logit) {
    const Real mx = std::max(logit[0], logit[1]);
    const Real e0 = std::exp(logit[0] - mx), e1 = std::exp(logit[1] - mx);
    return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

/// -log softmax(logit)[y], accurate when the prediction is confident.
template <typename Real>
Real cross_entropy2(const std::array<Real, 2>& logit, int y) {
    const Real margin = logit[1 - y] - logit[y];
    return std::max(margin, Real(0)) + std::log1p(std::exp(-std::abs(margin)));
}

/// d(cross_entropy2)/d(logit); the true-class entry is -p(other) to avoid 1 - p cancellation.
template <typename Real>
std::array<Real, 2> cross_entropy2_grad(const std::array<Real, 2>& prob, int y) {
    std::array<Real, 2> g{};
    g[1 - y] = prob[1 - y];
    g[y] = -prob[1 - y];
    return g;
}

} // namespace kwmatch
