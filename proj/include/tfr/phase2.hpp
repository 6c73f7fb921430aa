#pragma once

#include <cmath>

#include "tfr/types.hpp"

namespace tfr {

/// Fixed prior constants of the hierarchical model (Level 4), shared between
/// density evaluation and the Gibbs updates.
namespace prior {
inline constexpr double kChiMean = -1.5;
inline constexpr double kChiSd = 0.6;
inline constexpr double kPsiPrecShape = 1.0;
inline constexpr double kPsiPrecRate = 0.36;       // 0.6^2
inline constexpr double kTriangle4Mean = 0.3;
inline constexpr double kTriangle4Sd = 1.0;
inline constexpr double kDeltaPrecShape = 1.0;
inline constexpr double kDeltaPrecRate = 1.0;
inline constexpr double kAlphaMean[3] = {-1.0, 0.5, 1.5};
inline constexpr double kAlphaSd = 1.0;
inline constexpr double kMeanEpsTauMean = -0.25;
inline constexpr double kMeanEpsTauSd = 1.0;
inline constexpr double kSdEpsTauPrecShape = 1.0;
inline constexpr double kSdEpsTauPrecRate = 0.16;  // 0.4^2
inline constexpr double kASdLo = 0.0, kASdHi = 0.2;
inline constexpr double kBSdLo = 0.0, kBSdHi = 0.2;
inline constexpr double kSSdLo = 3.5, kSSdHi = 6.5;
inline constexpr double kConstSdLo = 0.8, kConstSdHi = 2.0;
inline constexpr double kMuBarLo = 0.0, kMuBarHi = 2.1;
inline constexpr double kSigmaMuLo = 0.0, kSigmaMuHi = 0.318;
inline constexpr double kRhoBarLo = 0.0, kRhoBarHi = 1.0;
inline constexpr double kSigmaRhoLo = 0.0, kSigmaRhoHi = 0.289;
inline constexpr double kSigmaEpsLo = 0.0, kSigmaEpsHi = 0.5;
}  // namespace prior

inline constexpr double kTwoLn9 = 4.394449154672439;  // 2 ln 9, both logistic slopes

/// Expected TFR decrement at level f for one period of the fertility
/// transition (the double-logistic decline function).
inline double double_logistic(double f, const Phase2CountryParams& q) {
    const double arg1 = (kTwoLn9 / q.Triangle[0]) * (f - q.sum_Triangle() + 0.5 * q.Triangle[0]);
    const double arg2 = (kTwoLn9 / q.Triangle[2]) * (f - q.Triangle[3] - 0.5 * q.Triangle[2]);
    return -q.d * expit(arg1) + q.d * expit(arg2);
}

/// Standard deviation of the Phase II distortions at fertility level f in
/// calendar year `year`, floored at a small positive constant.
inline double distortion_sd(double f, int year, const Phase2Hyper& h) {
    const double slope = (f >= h.S_sd) ? -h.a_sd : h.b_sd;
    double sd = h.sigma0 + (f - h.S_sd) * slope;
    if (year <= 1975) sd *= h.const_sd;
    return std::max(sd, 1e-8);
}

/// Drift-removed decrement for the transition starting at period t:
/// (f_t - f_{t+1}) - g(f_t).
inline double phase2_residual(const ModelState& state, int c, int t) {
    const auto& f = state.tfr[c];
    return (f[t] - f[t + 1]) - double_logistic(f[t], state.countries[c].p2);
}

/// Log density of the transition from period t to t+1 for country c, under
/// whichever phase owns that transition. Valid for t in [0, n_periods - 2].
inline double transition_logdensity(const ModelState& state, int c, int t) {
    const auto& cs = state.countries[c];
    const auto& f = state.tfr[c];
    const int tau = cs.markers.tau;
    const int lambda = cs.markers.lambda;

    if (tau >= 0 && t < tau) {
        // Phase I random walk; shares the start-period distortion variance.
        return normal_logpdf(f[t + 1] - f[t], 0.0, state.hyper2.sd_eps_tau);
    }
    if (t == tau) {
        return normal_logpdf(phase2_residual(state, c, t), state.hyper2.mean_eps_tau,
                             state.hyper2.sd_eps_tau);
    }
    if (t < lambda) {
        const double sd = distortion_sd(f[t], state.grid.year_of(t), state.hyper2);
        double eps = phase2_residual(state, c, t);
        if (state.ar_phase2) {
            const int first = (tau >= 0) ? tau : 0;
            if (t > first) eps -= state.hyper2.rho_phase2 * phase2_residual(state, c, t - 1);
        }
        return normal_logpdf(eps, 0.0, sd);
    }
    // Post-transition AR(1).
    const double mean = cs.p3.mu + cs.p3.rho * (f[t] - cs.p3.mu);
    return normal_logpdf(f[t + 1], mean, state.hyper3.sigma_eps);
}

/// Phase I + Phase II log likelihood for one country (transitions before
/// lambda; the Phase III part lives in phase3_loglik).
inline double phase2_loglik(const ModelState& state, int c) {
    const int t_end = std::min(state.countries[c].markers.lambda, state.grid.n_periods - 1);
    double ll = 0.0;
    for (int t = 0; t < t_end; ++t) ll += transition_logdensity(state, c, t);
    return ll;
}

/// Phase I + Phase II log likelihood summed over all countries; this is the
/// target of the slice updates for the variance-function parameters and phi.
inline double phase2_loglik_all(const ModelState& state) {
    double ll = 0.0;
    for (int c = 0; c < state.n_countries(); ++c) ll += phase2_loglik(state, c);
    return ll;
}

namespace detail {
inline double log_uniform(double x, double lo, double hi) {
    if (x < lo || x > hi) return kNegInf;
    return -std::log(hi - lo);
}
/// Density of a Gamma(shape, rate) prior evaluated at the precision 1/sd^2.
inline double log_gamma_prec(double sd, double shape, double rate) {
    if (!(sd > 0.0)) return kNegInf;
    const double prec = 1.0 / (sd * sd);
    return (shape - 1.0) * std::log(prec) - rate * prec + shape * std::log(rate) -
           std::lgamma(shape);
}
}  // namespace detail

/// Joint log prior density of all Phase II country parameters (Level 3) and
/// hyperparameters (Level 4). Out-of-support values yield -infinity.
inline double log_priors_phase2(const ModelState& state) {
    const auto& h = state.hyper2;
    double lp = 0.0;

    lp += normal_logpdf(h.chi, prior::kChiMean, prior::kChiSd);
    lp += detail::log_gamma_prec(h.psi, prior::kPsiPrecShape, prior::kPsiPrecRate);
    lp += normal_logpdf(h.Triangle4, prior::kTriangle4Mean, prior::kTriangle4Sd);
    lp += detail::log_gamma_prec(h.delta4, prior::kDeltaPrecShape, prior::kDeltaPrecRate);
    for (int i = 0; i < 3; ++i) {
        lp += normal_logpdf(h.alpha[i], prior::kAlphaMean[i], prior::kAlphaSd);
        lp += detail::log_gamma_prec(h.delta[i], prior::kDeltaPrecShape, prior::kDeltaPrecRate);
    }
    lp += detail::log_uniform(h.sigma0, state.sigma0_min, kSigma0Upper);
    lp += detail::log_uniform(h.a_sd, prior::kASdLo, prior::kASdHi);
    lp += detail::log_uniform(h.b_sd, prior::kBSdLo, prior::kBSdHi);
    lp += detail::log_uniform(h.S_sd, prior::kSSdLo, prior::kSSdHi);
    lp += detail::log_uniform(h.const_sd, prior::kConstSdLo, prior::kConstSdHi);
    lp += normal_logpdf(h.mean_eps_tau, prior::kMeanEpsTauMean, prior::kMeanEpsTauSd);
    lp += detail::log_gamma_prec(h.sd_eps_tau, prior::kSdEpsTauPrecShape, prior::kSdEpsTauPrecRate);
    if (state.ar_phase2) lp += detail::log_uniform(h.rho_phase2, 0.0, 1.0);

    for (const auto& cs : state.countries) {
        const auto& q = cs.p2;
        lp += normal_logpdf(q.d_star, h.chi, h.psi);
        lp += normal_logpdf(q.Triangle4_star, h.Triangle4, h.delta4);
        for (int i = 0; i < 3; ++i) lp += normal_logpdf(q.gamma[i], h.alpha[i], h.delta[i]);
        if (!cs.markers.tau_in_grid()) lp += detail::log_uniform(q.U, cs.u_lower, kUUpper);
        if (!(q.U - q.Triangle[3] > 0.0)) lp = kNegInf;
    }
    return lp;
}

}  // namespace tfr
