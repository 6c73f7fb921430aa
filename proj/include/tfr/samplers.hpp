#pragma once

#include <cmath>
#include <functional>

#include "tfr/common.hpp"
#include "tfr/rng.hpp"

namespace tfr {

/// Univariate slice sampler with stepping out and shrinkage, bounded to
/// [lower, upper]. `logf` need only be proportional to the log target.
template <typename LogF>
double slice_sample(double x0, LogF&& logf, RngStream& rng, double width, double lower,
                    double upper, int max_steps = 50) {
    const double logy = logf(x0) + std::log(std::max(rng.uniform(), 1e-300));

    double u = rng.uniform() * width;
    double left = x0 - u;
    double right = x0 + (width - u);
    int j = max_steps;
    while (left > lower && j-- > 0 && logf(left) > logy) left -= width;
    int k = max_steps;
    while (right < upper && k-- > 0 && logf(right) > logy) right += width;
    left = std::max(left, lower);
    right = std::min(right, upper);

    for (int it = 0; it < 1000; ++it) {
        const double x1 = left + (right - left) * rng.uniform();
        if (logf(x1) > logy) return x1;
        if (x1 > x0) {
            right = x1;
        } else {
            left = x1;
        }
    }
    return x0;  // interval collapsed to numerical noise
}

/// One random-walk Metropolis-Hastings step with a symmetric normal proposal.
/// Returns the new point and reports the acceptance probability used.
template <typename LogF>
double rw_mh_step(double x0, LogF&& logf, RngStream& rng, double scale, double& accept_prob,
                  bool* accepted = nullptr) {
    const double x1 = x0 + scale * rng.normal();
    const double l0 = logf(x0);
    const double l1 = logf(x1);
    double ratio = l1 - l0;
    if (std::isnan(ratio)) ratio = kNegInf;
    accept_prob = ratio >= 0.0 ? 1.0 : std::exp(std::max(ratio, -745.0));
    const bool take = std::log(std::max(rng.uniform(), 1e-300)) < ratio;
    if (accepted) *accepted = take;
    return take ? x1 : x0;
}

/// Robbins-Monro adaptation of a log proposal scale toward a target
/// acceptance rate. Only applied during burn-in; frozen afterwards.
struct AdaptiveScale {
    double log_scale = std::log(0.1);
    double target = 0.30;

    double scale() const { return std::exp(log_scale); }

    void update(double accept_prob, long iteration) {
        const double step = 1.0 / std::pow(static_cast<double>(iteration) + 10.0, 0.66);
        log_scale += step * (accept_prob - target);
        log_scale = std::min(std::max(log_scale, std::log(1e-6)), std::log(50.0));
    }
};

}  // namespace tfr
