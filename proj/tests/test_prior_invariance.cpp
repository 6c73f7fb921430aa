#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "tfr/sweep.hpp"

using namespace tfr;

// Successive-conditional simulator: alternate one full parameter sweep with a
// fresh draw of the latent series from the transition model given the current
// parameters. When every conditional update is exact, the stationary marginal
// of each parameter is its prior, so long-run summaries must match the prior
// analytically. This exercises the Gibbs rates, the MH priors, the slice
// targets and the AR residual convention in one shot.

namespace {

constexpr int kPeriods = 10;

ModelState build_world() {
    ModelState s;
    s.annual = true;
    s.ar_phase2 = true;
    s.uncertainty = false;
    s.sigma0_min = 0.04;
    s.grid = TimeGrid{1970, 1, kPeriods};

    auto add_country = [&](CountryId code, int tau, int lambda, double u_lower, double f0) {
        CountryState cs;
        cs.code = code;
        cs.markers.tau = tau;
        cs.markers.lambda = lambda;
        cs.in_phase3 = lambda <= kPeriods - 2;
        cs.u_lower = u_lower;
        cs.p2.gamma = s.hyper2.alpha;
        cs.p2.Triangle4_star = s.hyper2.Triangle4;
        cs.p2.d_star = s.hyper2.chi;
        cs.p2.U = tau >= 0 ? f0 : 0.5 * (u_lower + kUUpper);
        cs.p2.sync(s.d_bounds());
        cs.p3.mu = s.hyper3.mu_bar;
        cs.p3.rho = s.hyper3.rho_bar;
        cs.reference.assign(kPeriods, f0);
        s.countries.push_back(cs);
        s.tfr.emplace_back(kPeriods, f0);
    };
    // One decline that began before the window and reaches Phase III, and one
    // country whose transition starts inside the window (Phase I + pinned U).
    add_country(11, PhaseMarkers::kBeforeStart, 6, 5.0, 4.5);
    add_country(22, 2, kPeriods, 5.5, 6.8);
    return s;
}

/// Redraws the latent series of every country from the transition model under
/// the current parameters, honoring phase structure and AR carryover.
void regenerate_latents(ModelState& s, RngStream& gen) {
    for (int c = 0; c < s.n_countries(); ++c) {
        auto& cs = s.countries[c];
        auto& f = s.tfr[c];
        const int tau = cs.markers.tau;
        const int lambda = cs.markers.lambda;
        double e_prev = 0.0;
        for (int t = 0; t + 1 < kPeriods; ++t) {
            if (tau >= 0 && t < tau) {
                f[t + 1] = f[t] + s.hyper2.sd_eps_tau * gen.normal();
            } else if (t == tau) {
                // The start level pins U and with it the whole decline curve.
                cs.p2.U = f[t];
                cs.p2.sync(s.d_bounds());
                const double e = s.hyper2.mean_eps_tau + s.hyper2.sd_eps_tau * gen.normal();
                f[t + 1] = f[t] - double_logistic(f[t], cs.p2) - e;
                e_prev = e;
            } else if (t < lambda) {
                const double sd = distortion_sd(f[t], s.grid.year_of(t), s.hyper2);
                const int first = tau >= 0 ? tau : 0;
                double e = sd * gen.normal();
                if (s.ar_phase2 && t > first) e += s.hyper2.rho_phase2 * e_prev;
                f[t + 1] = f[t] - double_logistic(f[t], cs.p2) - e;
                e_prev = e;
            } else {
                f[t + 1] = cs.p3.mu + cs.p3.rho * (f[t] - cs.p3.mu) +
                           s.hyper3.sigma_eps * gen.normal();
            }
        }
        if (cs.markers.tau_in_grid()) {
            cs.p2.U = f[cs.markers.tau];
            cs.p2.sync(s.d_bounds());
        }
    }
}

double median_of(std::vector<double> v) {
    return quantile(std::move(v), 0.5);
}

}  // namespace

TEST_CASE("parameter sweeps leave the prior invariant under data regeneration") {
    ModelState s = build_world();
    SweepScales scales;
    scales.init(s);
    const ObsIndex obs_idx = ObsIndex::build(s);
    RngStream rng(101, 1);
    RngStream gen(202, 2);

    std::map<std::string, std::vector<double>> draws;
    const long total = 40000, warmup = 2000;
    for (long it = 1; it <= total; ++it) {
        regenerate_latents(s, gen);
        sample_phase2_sweep(s, rng, scales, obs_idx, it, it <= warmup);
        sample_phase3_sweep(s, rng);
        if (it > warmup && it % 4 == 0) {
            const auto& h = s.hyper2;
            draws["chi"].push_back(h.chi);
            draws["psi"].push_back(h.psi);
            draws["Triangle4"].push_back(h.Triangle4);
            draws["delta4"].push_back(h.delta4);
            for (int i = 0; i < 3; ++i)
                draws["alpha" + std::to_string(i)].push_back(h.alpha[i]);
            draws["sigma0"].push_back(h.sigma0);
            draws["a_sd"].push_back(h.a_sd);
            draws["b_sd"].push_back(h.b_sd);
            draws["S_sd"].push_back(h.S_sd);
            draws["const_sd"].push_back(h.const_sd);
            draws["mean_eps_tau"].push_back(h.mean_eps_tau);
            draws["sd_eps_tau"].push_back(h.sd_eps_tau);
            draws["rho_phase2"].push_back(h.rho_phase2);
            draws["mu_bar"].push_back(s.hyper3.mu_bar);
            draws["sigma_mu"].push_back(s.hyper3.sigma_mu);
            draws["rho_bar"].push_back(s.hyper3.rho_bar);
            draws["sigma_rho"].push_back(s.hyper3.sigma_rho);
            draws["sigma_eps"].push_back(s.hyper3.sigma_eps);
            draws["d_star_c"].push_back(s.countries[0].p2.d_star);
            draws["T4_star_c"].push_back(s.countries[0].p2.Triangle4_star);
            draws["gamma1_c"].push_back(s.countries[0].p2.gamma[0]);
            draws["U_c"].push_back(s.countries[0].p2.U);
        }
    }

    auto mean_is = [&](const std::string& k, double expect, double tol) {
        CAPTURE(k);
        REQUIRE(mean_of(draws[k]) == Catch::Approx(expect).margin(tol));
    };
    auto median_is = [&](const std::string& k, double expect, double tol) {
        CAPTURE(k);
        REQUIRE(median_of(draws[k]) == Catch::Approx(expect).margin(tol));
    };

    // Normal-prior hyperparameters: means.
    mean_is("chi", -1.5, 0.1);
    mean_is("Triangle4", 0.3, 0.15);
    mean_is("alpha0", -1.0, 0.15);
    mean_is("alpha1", 0.5, 0.15);
    mean_is("alpha2", 1.5, 0.15);
    mean_is("mean_eps_tau", -0.25, 0.15);

    // Uniform-prior hyperparameters: means at the interval midpoints.
    mean_is("sigma0", 0.32, 0.03);
    mean_is("a_sd", 0.1, 0.012);
    mean_is("b_sd", 0.1, 0.012);
    mean_is("S_sd", 5.0, 0.2);
    mean_is("const_sd", 1.4, 0.06);
    mean_is("rho_phase2", 0.5, 0.05);
    mean_is("mu_bar", 1.05, 0.1);
    mean_is("sigma_mu", 0.159, 0.02);
    mean_is("rho_bar", 0.5, 0.06);
    mean_is("sigma_rho", 0.1445, 0.02);
    mean_is("sigma_eps", 0.25, 0.025);

    // Gamma-precision standard deviations: medians (the means are heavy-tailed).
    median_is("psi", 0.7207, 0.1);
    median_is("delta4", 1.2011, 0.2);
    median_is("sd_eps_tau", 0.4805, 0.1);

    // Country-level marginals.
    median_is("d_star_c", -1.5, 0.2);
    median_is("T4_star_c", 0.3, 0.25);
    median_is("gamma1_c", -1.0, 0.25);
    mean_is("U_c", 6.9, 0.15);  // uniform on (5.0, 8.8)
}
