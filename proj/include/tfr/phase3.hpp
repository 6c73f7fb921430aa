#pragma once

#include <cmath>

#include "tfr/phase2.hpp"
#include "tfr/types.hpp"

namespace tfr {

/// Number of Phase III transitions of country c (0 when Phase III was not
/// reached or fewer than two periods lie at or after lambda).
inline int phase3_transition_count(const ModelState& state, int c) {
    const int lambda = state.countries[c].markers.lambda;
    return std::max(0, state.grid.n_periods - 1 - lambda);
}

/// Post-transition AR(1) log likelihood for one country: transitions from
/// lambda onward.
inline double phase3_loglik(const ModelState& state, int c) {
    const auto& cs = state.countries[c];
    const auto& f = state.tfr[c];
    const int n = state.grid.n_periods;
    double ll = 0.0;
    for (int t = cs.markers.lambda; t < n - 1; ++t) {
        const double mean = cs.p3.mu + cs.p3.rho * (f[t] - cs.p3.mu);
        ll += normal_logpdf(f[t + 1], mean, state.hyper3.sigma_eps);
    }
    return ll;
}

inline double phase3_loglik_all(const ModelState& state) {
    double ll = 0.0;
    for (int c = 0; c < state.n_countries(); ++c)
        if (state.countries[c].in_phase3) ll += phase3_loglik(state, c);
    return ll;
}

/// Joint log prior of the Phase III country parameters and hyperparameters.
/// The country normals carry support indicators (mu_c in [0, 10], rho_c in
/// (0, 1)) without renormalization.
inline double log_priors_phase3(const ModelState& state) {
    const auto& h = state.hyper3;
    double lp = 0.0;
    lp += detail::log_uniform(h.mu_bar, prior::kMuBarLo, prior::kMuBarHi);
    lp += detail::log_uniform(h.sigma_mu, prior::kSigmaMuLo, prior::kSigmaMuHi);
    lp += detail::log_uniform(h.rho_bar, prior::kRhoBarLo, prior::kRhoBarHi);
    lp += detail::log_uniform(h.sigma_rho, prior::kSigmaRhoLo, prior::kSigmaRhoHi);
    lp += detail::log_uniform(h.sigma_eps, prior::kSigmaEpsLo, prior::kSigmaEpsHi);
    for (const auto& cs : state.countries) {
        if (!cs.in_phase3) continue;
        if (!(cs.p3.mu >= 0.0 && cs.p3.mu <= kMuUpper)) return kNegInf;
        if (!(cs.p3.rho > 0.0 && cs.p3.rho < 1.0)) return kNegInf;
        lp += normal_logpdf(cs.p3.mu, h.mu_bar, h.sigma_mu);
        lp += normal_logpdf(cs.p3.rho, h.rho_bar, h.sigma_rho);
    }
    return lp;
}

}  // namespace tfr
