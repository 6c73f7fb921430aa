#pragma once

#include <cmath>
#include <vector>

#include "tfr/phase2.hpp"
#include "tfr/phase3.hpp"
#include "tfr/rng.hpp"
#include "tfr/samplers.hpp"
#include "tfr/types.hpp"

namespace tfr {

inline constexpr double kLatentLo = 0.0;
inline constexpr double kLatentHi = 20.0;  // generous cap; no recorded TFR approaches it

/// Per-period lookup of the observations whose likelihood involves a given
/// latent value (five-year observations touch two flanking periods).
struct ObsIndex {
    std::vector<std::vector<std::vector<int>>> touch;  // country x period x obs index

    static ObsIndex build(const ModelState& state) {
        ObsIndex idx;
        idx.touch.resize(state.countries.size());
        for (std::size_t c = 0; c < state.countries.size(); ++c) {
            idx.touch[c].assign(state.grid.n_periods, {});
            if (c >= state.observations.size()) continue;
            for (std::size_t k = 0; k < state.observations[c].size(); ++k) {
                const auto& o = state.observations[c][k];
                idx.touch[c][o.period].push_back(static_cast<int>(k));
                if (o.w_next > 0.0 && o.period + 1 < state.grid.n_periods)
                    idx.touch[c][o.period + 1].push_back(static_cast<int>(k));
            }
        }
        return idx;
    }
};

/// Adaptive proposal scales for the Metropolis-Hastings moves. The layout is
/// fixed by the country list and grid, so it can be checkpointed as a flat
/// vector alongside the chain state.
struct SweepScales {
    struct CountryScales {
        AdaptiveScale gamma[3];
        AdaptiveScale Triangle4_star;
        AdaptiveScale d_star;
        AdaptiveScale U;
    };
    std::vector<CountryScales> country;
    std::vector<std::vector<AdaptiveScale>> latent;  // country x period

    void init(const ModelState& state) {
        country.assign(state.countries.size(), CountryScales{});
        for (auto& cs : country) {
            for (auto& g : cs.gamma) g.log_scale = std::log(0.3);
            cs.Triangle4_star.log_scale = std::log(0.3);
            cs.d_star.log_scale = std::log(0.3);
            cs.U.log_scale = std::log(0.3);
        }
        latent.assign(state.countries.size(),
                      std::vector<AdaptiveScale>(state.grid.n_periods, AdaptiveScale{std::log(0.1)}));
    }

    std::vector<double> serialize() const {
        std::vector<double> out;
        for (const auto& cs : country) {
            for (const auto& g : cs.gamma) out.push_back(g.log_scale);
            out.push_back(cs.Triangle4_star.log_scale);
            out.push_back(cs.d_star.log_scale);
            out.push_back(cs.U.log_scale);
        }
        for (const auto& row : latent)
            for (const auto& s : row) out.push_back(s.log_scale);
        return out;
    }

    void deserialize(const std::vector<double>& flat) {
        std::size_t i = 0;
        for (auto& cs : country) {
            for (auto& g : cs.gamma) g.log_scale = flat.at(i++);
            cs.Triangle4_star.log_scale = flat.at(i++);
            cs.d_star.log_scale = flat.at(i++);
            cs.U.log_scale = flat.at(i++);
        }
        for (auto& row : latent)
            for (auto& s : row) s.log_scale = flat.at(i++);
        if (i != flat.size()) throw IntegrityError("proposal-scale checkpoint has wrong length");
    }
};

struct LatentCounters {
    long proposals = 0;
    long accepts = 0;
    double rate() const { return proposals > 0 ? static_cast<double>(accepts) / proposals : 0.0; }
};

namespace detail {

/// Conjugate normal-mean draw: prior N(m0, s0^2), n observations with sum
/// `sum` and known sd `lik_sd`.
inline double gibbs_normal_mean(RngStream& rng, double m0, double s0, double sum, int n,
                                double lik_sd) {
    const double prior_prec = 1.0 / (s0 * s0);
    const double lik_prec = 1.0 / (lik_sd * lik_sd);
    const double prec = prior_prec + n * lik_prec;
    const double mean = (m0 * prior_prec + sum * lik_prec) / prec;
    return rng.normal(mean, 1.0 / std::sqrt(prec));
}

/// Conjugate precision draw: prior Gamma(shape, rate) on 1/sd^2 with n
/// residuals of squared sum `ss`. Returns the sd.
inline double gibbs_sd(RngStream& rng, double shape, double rate, double ss, int n) {
    const double prec = rng.gamma(shape + 0.5 * n, rate + 0.5 * ss);
    return 1.0 / std::sqrt(prec);
}

inline double measurement_loglik_at(const ModelState& state, const ObsIndex& obs_idx, int c,
                                    int t) {
    double ll = 0.0;
    const auto& f = state.tfr[c];
    for (int k : obs_idx.touch[c][t]) {
        const auto& o = state.observations[c][k];
        const double latent = (o.w_next > 0.0)
                                  ? (1.0 - o.w_next) * f[o.period] + o.w_next * f[o.period + 1]
                                  : f[o.period];
        ll += normal_logpdf(o.y, latent + o.bias, o.sd);
    }
    return ll;
}

/// Log target of a candidate value for latent f[c][t]: all transition terms
/// touching period t plus the measurement terms of attached observations.
/// When t is a pinned start period (U_c = f_{c,tau}), the whole transition
/// likelihood of the country depends on the value through the decline curve.
inline double latent_target(ModelState& state, const ObsIndex& obs_idx, int c, int t, double v) {
    if (!(v > kLatentLo && v < kLatentHi)) return kNegInf;
    auto& cs = state.countries[c];
    auto& f = state.tfr[c];
    const double saved_f = f[t];
    const bool pinned = cs.markers.tau_in_grid() && t == cs.markers.tau;
    const Phase2CountryParams saved_p2 = cs.p2;

    f[t] = v;
    double ll;
    if (pinned) {
        // The pinned start level feeds the decline curve, so every Phase II
        // term of the country moves with it.
        cs.p2.U = v;
        cs.p2.sync(state.d_bounds());
        ll = (cs.p2.U - cs.p2.Triangle[3] > 0.0) ? phase2_loglik(state, c) : kNegInf;
    } else {
        const int fwd = state.ar_phase2 ? 1 : 0;
        const int lo = std::max(0, t - 1);
        const int hi = std::min(state.grid.n_periods - 2, t + fwd);
        ll = 0.0;
        for (int s = lo; s <= hi; ++s) ll += transition_logdensity(state, c, s);
    }
    if (ll > kNegInf) ll += measurement_loglik_at(state, obs_idx, c, t);

    f[t] = saved_f;
    cs.p2 = saved_p2;
    return ll;
}

/// Mass of N(mean, sd^2) inside the latent support, for the Hastings
/// correction of the truncated-normal proposal.
inline double truncation_log_mass(double mean, double sd) {
    const double z = normal_cdf((kLatentHi - mean) / sd) - normal_cdf((kLatentLo - mean) / sd);
    return std::log(std::max(z, 1e-300));
}

}  // namespace detail

/// Gibbs draws for the Phase II hyperparameters with conjugate normal or
/// gamma conditionals (Level 4 priors).
inline void phase2_gibbs_hyper(ModelState& state, RngStream& rng) {
    auto& h = state.hyper2;
    const int n_c = state.n_countries();
    {
        double sum = 0.0;
        for (const auto& cs : state.countries) sum += cs.p2.d_star;
        h.chi = detail::gibbs_normal_mean(rng, prior::kChiMean, prior::kChiSd, sum, n_c, h.psi);
        double ss = 0.0;
        for (const auto& cs : state.countries) {
            const double r = cs.p2.d_star - h.chi;
            ss += r * r;
        }
        h.psi = detail::gibbs_sd(rng, prior::kPsiPrecShape, prior::kPsiPrecRate, ss, n_c);
    }
    {
        double sum = 0.0;
        for (const auto& cs : state.countries) sum += cs.p2.Triangle4_star;
        h.Triangle4 = detail::gibbs_normal_mean(rng, prior::kTriangle4Mean, prior::kTriangle4Sd,
                                                sum, n_c, h.delta4);
        double ss = 0.0;
        for (const auto& cs : state.countries) {
            const double r = cs.p2.Triangle4_star - h.Triangle4;
            ss += r * r;
        }
        h.delta4 = detail::gibbs_sd(rng, prior::kDeltaPrecShape, prior::kDeltaPrecRate, ss, n_c);
    }
    for (int i = 0; i < 3; ++i) {
        double sum = 0.0;
        for (const auto& cs : state.countries) sum += cs.p2.gamma[i];
        h.alpha[i] = detail::gibbs_normal_mean(rng, prior::kAlphaMean[i], prior::kAlphaSd, sum,
                                               n_c, h.delta[i]);
        double ss = 0.0;
        for (const auto& cs : state.countries) {
            const double r = cs.p2.gamma[i] - h.alpha[i];
            ss += r * r;
        }
        h.delta[i] = detail::gibbs_sd(rng, prior::kDeltaPrecShape, prior::kDeltaPrecRate, ss, n_c);
    }
    {
        // Start-period distortions, plus the Phase I random-walk residuals
        // which share their variance.
        double sum_tau = 0.0, ss_tau = 0.0, ss_ph1 = 0.0;
        int n_tau = 0, n_ph1 = 0;
        for (int c = 0; c < n_c; ++c) {
            const auto& m = state.countries[c].markers;
            if (!m.tau_in_grid()) continue;
            if (m.tau <= state.grid.n_periods - 2) {
                sum_tau += phase2_residual(state, c, m.tau);
                ++n_tau;
            }
            for (int t = 0; t < m.tau; ++t) {
                const double e = state.tfr[c][t + 1] - state.tfr[c][t];
                ss_ph1 += e * e;
                ++n_ph1;
            }
        }
        h.mean_eps_tau = detail::gibbs_normal_mean(rng, prior::kMeanEpsTauMean,
                                                   prior::kMeanEpsTauSd, sum_tau, n_tau,
                                                   h.sd_eps_tau);
        for (int c = 0; c < n_c; ++c) {
            const auto& m = state.countries[c].markers;
            if (m.tau_in_grid() && m.tau <= state.grid.n_periods - 2) {
                const double r = phase2_residual(state, c, m.tau) - h.mean_eps_tau;
                ss_tau += r * r;
            }
        }
        h.sd_eps_tau = detail::gibbs_sd(rng, prior::kSdEpsTauPrecShape, prior::kSdEpsTauPrecRate,
                                        ss_tau + ss_ph1, n_tau + n_ph1);
    }
}

/// Random-walk MH updates of one country's transition parameters (gamma,
/// Triangle4_star, d_star, and U when the start precedes the grid).
inline void phase2_country_mh(ModelState& state, int c, RngStream& rng,
                              SweepScales::CountryScales& sc, long iteration, bool adapting) {
    auto& h = state.hyper2;
    auto& cs = state.countries[c];
    const auto db = state.d_bounds();
    double cur_ll = phase2_loglik(state, c);

    auto try_component = [&](AdaptiveScale& scale, double x0, auto&& set, double prior_mean,
                             double prior_sd, bool uniform_u) {
        const double x1 = x0 + scale.scale() * rng.normal();
        const Phase2CountryParams saved = cs.p2;
        set(x1);
        cs.p2.sync(db);
        double lp1;
        if (uniform_u) {
            lp1 = (x1 > cs.u_lower && x1 < kUUpper) ? 0.0 : kNegInf;
        } else {
            lp1 = normal_logpdf(x1, prior_mean, prior_sd);
        }
        if (!(cs.p2.U - cs.p2.Triangle[3] > 1e-4)) lp1 = kNegInf;
        const double new_ll = lp1 > kNegInf ? phase2_loglik(state, c) : kNegInf;
        const double lp0 = uniform_u ? 0.0 : normal_logpdf(x0, prior_mean, prior_sd);
        const double ratio = (new_ll + lp1) - (cur_ll + lp0);
        const double acc = ratio >= 0.0 ? 1.0 : std::exp(std::max(ratio, -745.0));
        if (std::log(std::max(rng.uniform(), 1e-300)) < ratio) {
            cur_ll = new_ll;
        } else {
            cs.p2 = saved;
        }
        if (adapting) scale.update(acc, iteration);
    };

    for (int i = 0; i < 3; ++i) {
        try_component(
            sc.gamma[i], cs.p2.gamma[i], [&](double v) { cs.p2.gamma[i] = v; }, h.alpha[i],
            h.delta[i], false);
    }
    try_component(
        sc.Triangle4_star, cs.p2.Triangle4_star, [&](double v) { cs.p2.Triangle4_star = v; },
        h.Triangle4, h.delta4, false);
    try_component(
        sc.d_star, cs.p2.d_star, [&](double v) { cs.p2.d_star = v; }, h.chi, h.psi, false);
    if (!cs.markers.tau_in_grid()) {
        try_component(
            sc.U, cs.p2.U, [&](double v) { cs.p2.U = v; }, 0.0, 1.0, true);
    }
}

/// Slice updates of the bounded Phase II hyperparameters (and phi in AR
/// mode). Their targets are the full Phase I/II likelihood; the uniform
/// priors enter through the slice bounds.
inline void phase2_slice_hyper(ModelState& state, RngStream& rng) {
    auto& h = state.hyper2;
    auto slice_param = [&](double& param, double lo, double hi) {
        const double width = (hi - lo) / 4.0;
        const double x1 = slice_sample(
            param,
            [&](double x) {
                param = x;
                return phase2_loglik_all(state);
            },
            rng, width, lo, hi);
        param = x1;
    };
    slice_param(h.sigma0, state.sigma0_min, kSigma0Upper);
    slice_param(h.a_sd, prior::kASdLo, prior::kASdHi);
    slice_param(h.b_sd, prior::kBSdLo, prior::kBSdHi);
    slice_param(h.S_sd, prior::kSSdLo, prior::kSSdHi);
    slice_param(h.const_sd, prior::kConstSdLo, prior::kConstSdHi);
    if (state.ar_phase2) slice_param(h.rho_phase2, 0.0, 1.0);
}

/// Truncated-normal MH pass over one country's latent TFR values.
inline void phase2_latent_pass(ModelState& state, int c, RngStream& rng,
                               std::vector<AdaptiveScale>& scales, const ObsIndex& obs_idx,
                               long iteration, bool adapting, LatentCounters* counters) {
    auto& cs = state.countries[c];
    auto& f = state.tfr[c];
    for (int t = 0; t < state.grid.n_periods; ++t) {
        auto& scale = scales[t];
        const double s = scale.scale();
        const double v0 = f[t];
        const double v1 = rng.truncated_normal(v0, s, kLatentLo, kLatentHi);
        const double l0 = detail::latent_target(state, obs_idx, c, t, v0);
        const double l1 = detail::latent_target(state, obs_idx, c, t, v1);
        const double hastings =
            detail::truncation_log_mass(v0, s) - detail::truncation_log_mass(v1, s);
        const double ratio = l1 - l0 + hastings;
        const double acc = ratio >= 0.0 ? 1.0 : std::exp(std::max(ratio, -745.0));
        if (counters) ++counters->proposals;
        if (std::log(std::max(rng.uniform(), 1e-300)) < ratio) {
            f[t] = v1;
            if (cs.markers.tau_in_grid() && t == cs.markers.tau) {
                cs.p2.U = v1;
                cs.p2.sync(state.d_bounds());
            }
            if (counters) ++counters->accepts;
        }
        if (adapting) scale.update(acc, iteration);
    }
}

struct NormalConditional {
    double mean = 0.0;
    double sd = 1.0;
};

/// Conditional of mu_c given everything else (before truncation to [0, 10]).
inline NormalConditional phase3_mu_conditional(const ModelState& state, int c) {
    const auto& h = state.hyper3;
    const auto& cs = state.countries[c];
    const auto& f = state.tfr[c];
    const double lik_prec = 1.0 / (h.sigma_eps * h.sigma_eps);
    const double one_minus_rho = 1.0 - cs.p3.rho;
    double prec = 1.0 / (h.sigma_mu * h.sigma_mu);
    double num = h.mu_bar * prec;
    for (int t = cs.markers.lambda; t < state.grid.n_periods - 1; ++t) {
        prec += one_minus_rho * one_minus_rho * lik_prec;
        num += (f[t + 1] - cs.p3.rho * f[t]) * one_minus_rho * lik_prec;
    }
    return {num / prec, 1.0 / std::sqrt(prec)};
}

/// Conditional of rho_c given everything else (before truncation to (0, 1)).
inline NormalConditional phase3_rho_conditional(const ModelState& state, int c) {
    const auto& h = state.hyper3;
    const auto& cs = state.countries[c];
    const auto& f = state.tfr[c];
    const double lik_prec = 1.0 / (h.sigma_eps * h.sigma_eps);
    double prec = 1.0 / (h.sigma_rho * h.sigma_rho);
    double num = h.rho_bar * prec;
    for (int t = cs.markers.lambda; t < state.grid.n_periods - 1; ++t) {
        const double u = f[t] - cs.p3.mu;
        const double v = f[t + 1] - cs.p3.mu;
        prec += u * u * lik_prec;
        num += u * v * lik_prec;
    }
    return {num / prec, 1.0 / std::sqrt(prec)};
}

/// Gibbs draws of one country's post-transition mean and autocorrelation
/// from their truncated normal conditionals.
inline void phase3_country_gibbs(ModelState& state, int c, RngStream& rng) {
    auto& cs = state.countries[c];
    const auto mu_cond = phase3_mu_conditional(state, c);
    cs.p3.mu = rng.truncated_normal(mu_cond.mean, mu_cond.sd, 0.0, kMuUpper);
    const auto rho_cond = phase3_rho_conditional(state, c);
    cs.p3.rho = rng.truncated_normal(rho_cond.mean, rho_cond.sd, 0.0, 1.0);
}

/// Slice updates of the Phase III world parameters.
inline void phase3_slice_hyper(ModelState& state, RngStream& rng, const std::vector<int>& active) {
    auto& h = state.hyper3;
    auto country_prior_ll = [&]() {
        if (!(h.sigma_mu > 1e-12) || !(h.sigma_rho > 1e-12)) return kNegInf;
        double ll = 0.0;
        for (int c : active) {
            const auto& p3 = state.countries[c].p3;
            ll += normal_logpdf(p3.mu, h.mu_bar, h.sigma_mu);
            ll += normal_logpdf(p3.rho, h.rho_bar, h.sigma_rho);
        }
        return ll;
    };
    auto slice_hyper = [&](double& param, double lo, double hi, auto&& target) {
        const double width = (hi - lo) / 4.0;
        const double x1 = slice_sample(
            param,
            [&](double x) {
                param = x;
                return target();
            },
            rng, width, lo, hi);
        param = x1;
    };
    slice_hyper(h.mu_bar, prior::kMuBarLo, prior::kMuBarHi, country_prior_ll);
    slice_hyper(h.sigma_mu, prior::kSigmaMuLo, prior::kSigmaMuHi, country_prior_ll);
    slice_hyper(h.rho_bar, prior::kRhoBarLo, prior::kRhoBarHi, country_prior_ll);
    slice_hyper(h.sigma_rho, prior::kSigmaRhoLo, prior::kSigmaRhoHi, country_prior_ll);
    slice_hyper(h.sigma_eps, prior::kSigmaEpsLo, prior::kSigmaEpsHi, [&] {
        if (!(h.sigma_eps > 1e-12)) return kNegInf;
        return phase3_loglik_all(state);
    });
}

inline std::vector<int> phase3_active_countries(const ModelState& state) {
    std::vector<int> active;
    for (int c = 0; c < state.n_countries(); ++c)
        if (state.countries[c].in_phase3 && phase3_transition_count(state, c) > 0)
            active.push_back(c);
    return active;
}

/// One full Phase I/II sweep: conjugate Gibbs draws, country-level MH, slice
/// sampling of the bounded hyperparameters, and, with uncertainty on, a
/// truncated-normal MH pass over every latent TFR value.
inline void sample_phase2_sweep(ModelState& state, RngStream& rng, SweepScales& scales,
                                const ObsIndex& obs_idx, long iteration, bool adapting,
                                LatentCounters* counters = nullptr) {
    phase2_gibbs_hyper(state, rng);
    for (int c = 0; c < state.n_countries(); ++c)
        phase2_country_mh(state, c, rng, scales.country[c], iteration, adapting);
    phase2_slice_hyper(state, rng);
    if (state.uncertainty) {
        for (int c = 0; c < state.n_countries(); ++c)
            phase2_latent_pass(state, c, rng, scales.latent[c], obs_idx, iteration, adapting,
                               counters);
    }
}

/// One post-transition sweep. A no-op when no country is in Phase III.
inline void sample_phase3_sweep(ModelState& state, RngStream& rng) {
    const auto active = phase3_active_countries(state);
    if (active.empty()) return;
    for (int c : active) phase3_country_gibbs(state, c, rng);
    phase3_slice_hyper(state, rng, active);
}

}  // namespace tfr
