#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tfr/common.hpp"

namespace tfr {

/// UN numeric country code.
using CountryId = int;

/// Regularly spaced calendar-time axis. step is 1 (annual) or 5 (five-year
/// periods labeled by their start year).
struct TimeGrid {
    int start_year = 1950;
    int step = 5;
    int n_periods = 0;

    int year_of(int period) const { return start_year + step * period; }
    int last_year() const { return year_of(n_periods - 1); }
    bool valid() const { return (step == 1 || step == 5) && n_periods >= 3; }
};

/// One raw TFR data point with its data-quality covariates. Categorical
/// covariate values are stored as strings, continuous ones as doubles.
struct RawObservation {
    CountryId country = 0;
    double year = 0.0;
    double tfr = 0.0;
    std::vector<std::string> covariates;       // parallel to RawDataset::covariate_names
    std::vector<double> cont_covariates;       // parallel to RawDataset::cont_covariate_names
};

/// Per-country reference (initial) TFR series on a TimeGrid.
struct ReferenceSeries {
    CountryId country = 0;
    TimeGrid grid;
    std::vector<double> values;
};

/// Phase boundary markers. tau == kBeforeStart means the fertility decline
/// began before the data; lambda == n_periods means Phase III not reached.
struct PhaseMarkers {
    static constexpr int kBeforeStart = -1;
    int tau = kBeforeStart;
    int lambda = 0;  // set to grid.n_periods when not reached

    bool tau_in_grid() const { return tau >= 0; }
    bool lambda_reached(int n_periods) const { return lambda < n_periods; }
};

/// Bounds of the maximum-decrement parameter; they differ between the
/// five-year and annual variants of the model.
struct DeclineRateBounds {
    double lo = 0.25;
    double hi = 2.5;
    static DeclineRateBounds for_mode(bool annual) {
        return annual ? DeclineRateBounds{0.05, 0.5} : DeclineRateBounds{0.25, 2.5};
    }
};

inline double to_logit_scale(double x, double lo, double hi) {
    return std::log((x - lo) / (hi - x));
}
inline double from_logit_scale(double star, double lo, double hi) {
    return lo + (hi - lo) * expit(star);
}

inline constexpr double kTriangle4Lo = 1.0;
inline constexpr double kTriangle4Hi = 2.5;
inline constexpr double kUUpper = 8.8;

/// Country-level parameters of the fertility-transition (Phase II) model.
/// The sampled coordinates are gamma[3], Triangle4_star, d_star and U; the
/// natural-scale quantities are derived through sync().
struct Phase2CountryParams {
    std::array<double, 3> gamma{0.0, 0.0, 0.0};
    double Triangle4_star = 0.0;
    double d_star = 0.0;
    double U = 6.0;

    // Derived, kept consistent by sync():
    std::array<double, 3> p{0.0, 0.0, 0.0};
    std::array<double, 4> Triangle{0.0, 0.0, 0.0, 0.0};
    double d = 0.0;

    void sync(const DeclineRateBounds& db) {
        const double m = std::max({gamma[0], gamma[1], gamma[2]});
        double tot = 0.0;
        std::array<double, 3> e{};
        for (int i = 0; i < 3; ++i) {
            e[i] = std::exp(gamma[i] - m);
            tot += e[i];
        }
        for (int i = 0; i < 3; ++i) p[i] = e[i] / tot;
        Triangle[3] = from_logit_scale(Triangle4_star, kTriangle4Lo, kTriangle4Hi);
        const double span = U - Triangle[3];
        for (int i = 0; i < 3; ++i) Triangle[i] = p[i] * span;
        d = from_logit_scale(d_star, db.lo, db.hi);
    }

    double sum_Triangle() const { return Triangle[0] + Triangle[1] + Triangle[2] + Triangle[3]; }
};

/// Country-independent parameters of the Phase II model. Field names mirror
/// the trace-file names so the persisted layout is self-describing.
struct Phase2Hyper {
    double chi = -1.5;          // mean of d_star prior
    double psi = 0.72;          // sd of d_star prior
    double Triangle4 = 0.3;     // mean of Triangle4_star prior
    double delta4 = 1.2;        // sd of Triangle4_star prior
    std::array<double, 3> alpha{-1.0, 0.5, 1.5};  // means of gamma priors
    std::array<double, 3> delta{1.2, 1.2, 1.2};   // sds of gamma priors
    double sigma0 = 0.1;        // peak distortion sd
    double a_sd = 0.1;          // variance-function slope above S
    double b_sd = 0.1;          // variance-function slope below S
    double S_sd = 5.0;          // fertility level of the variance peak
    double const_sd = 1.4;      // pre-1975 multiplier
    double mean_eps_tau = -0.25;  // start-period distortion mean
    double sd_eps_tau = 0.48;     // start-period distortion sd
    double rho_phase2 = 0.5;      // AR(1) coefficient, used only in AR mode
};

/// Country parameters of the post-transition AR(1) model.
struct Phase3CountryParams {
    double mu = 1.0;
    double rho = 0.5;
};

/// World parameters of the post-transition model (Table 1 naming).
struct Phase3Hyper {
    double mu_bar = 1.05;
    double sigma_mu = 0.159;
    double rho_bar = 0.5;
    double sigma_rho = 0.1445;
    double sigma_eps = 0.25;
};

inline constexpr double kMuUpper = 10.0;       // truncation of mu_c conditionals
inline constexpr double kSigma0Upper = 0.6;
inline constexpr double kUnbiasedVrSd = 0.0161;

/// Bias/sd assigned to raw observations, resolved per unique covariate
/// combination. `combination` holds the categorical values followed by the
/// formatted continuous values.
struct MeasurementRow {
    std::vector<std::string> combination;
    double bias = 0.0;
    double sd = 0.1;
    int n_obs = 0;
    bool vr_override = false;
};

struct MeasurementParams {
    std::map<CountryId, std::vector<MeasurementRow>> by_country;
};

/// Per-country record inside the MCMC state.
struct CountryState {
    CountryId code = 0;
    PhaseMarkers markers;
    Phase2CountryParams p2;
    bool in_phase3 = false;    // participates in the Phase III model
    Phase3CountryParams p3;
    double u_lower = 5.5;      // lower bound of the U prior, fixed from the data
    std::vector<double> reference;  // initial TFR on the estimation grid
};

/// One observation attached to the latent-TFR likelihood. The latent value it
/// measures is (1 - w_next) * f[period] + w_next * f[period + 1]; annual
/// observations have w_next == 0.
struct AttachedObs {
    int period = 0;
    double w_next = 0.0;
    double y = 0.0;
    double bias = 0.0;
    double sd = 0.1;
};

/// Full MCMC state: hyperparameters, country parameters and the latent TFR
/// matrix. Value semantics; each chain owns one.
struct ModelState {
    bool annual = false;
    bool ar_phase2 = false;
    bool uncertainty = false;
    double sigma0_min = 0.01;

    TimeGrid grid;
    Phase2Hyper hyper2;
    Phase3Hyper hyper3;
    std::vector<CountryState> countries;
    std::vector<std::vector<double>> tfr;              // country x period latents
    std::vector<std::vector<AttachedObs>> observations;  // per country

    DeclineRateBounds d_bounds() const { return DeclineRateBounds::for_mode(annual); }

    int n_countries() const { return static_cast<int>(countries.size()); }
    int n_periods() const { return grid.n_periods; }
};

/// Posterior sample of past-and-future TFR paths per country.
struct TrajectorySet {
    TimeGrid grid;                 // estimation grid extended to the end year
    int n_past_periods = 0;        // leading periods covered by the estimation
    bool past_posterior = false;   // past periods carry posterior spread
    std::vector<CountryId> countries;
    std::vector<std::vector<std::vector<double>>> paths;  // country x traj x period
};

namespace detail {
inline void check_bounds(std::vector<std::string>& out, const std::string& name,
                         double v, double lo, double hi, bool open = false) {
    const bool bad = open ? !(v > lo && v < hi) : !(v >= lo && v <= hi);
    if (bad) {
        out.push_back(name + " = " + std::to_string(v) + " outside " +
                      (open ? "(" : "[") + std::to_string(lo) + ", " + std::to_string(hi) +
                      (open ? ")" : "]"));
    }
}
}  // namespace detail

/// Checks every structural invariant of the state and reports violations as
/// strings; never throws.
inline std::vector<std::string> validate_state(const ModelState& state) {
    std::vector<std::string> out;
    const auto db = state.d_bounds();

    if (!state.grid.valid()) out.push_back("grid invalid (step must be 1 or 5, n_periods >= 3)");
    if (state.tfr.size() != state.countries.size())
        out.push_back("tfr matrix row count does not match country list");

    detail::check_bounds(out, "sigma0", state.hyper2.sigma0, state.sigma0_min, kSigma0Upper);
    detail::check_bounds(out, "a_sd", state.hyper2.a_sd, 0.0, 0.2);
    detail::check_bounds(out, "b_sd", state.hyper2.b_sd, 0.0, 0.2);
    detail::check_bounds(out, "S_sd", state.hyper2.S_sd, 3.5, 6.5);
    detail::check_bounds(out, "const_sd", state.hyper2.const_sd, 0.8, 2.0);
    if (state.hyper2.psi <= 0.0) out.push_back("psi must be positive");
    if (state.hyper2.delta4 <= 0.0) out.push_back("delta4 must be positive");
    if (state.hyper2.sd_eps_tau <= 0.0) out.push_back("sd_eps_tau must be positive");
    if (state.ar_phase2)
        detail::check_bounds(out, "rho_phase2", state.hyper2.rho_phase2, 0.0, 1.0, true);

    detail::check_bounds(out, "mu", state.hyper3.mu_bar, 0.0, 2.1);
    detail::check_bounds(out, "sigma.mu", state.hyper3.sigma_mu, 0.0, 0.318);
    detail::check_bounds(out, "rho", state.hyper3.rho_bar, 0.0, 1.0);
    detail::check_bounds(out, "sigma.rho", state.hyper3.sigma_rho, 0.0, 0.289);
    detail::check_bounds(out, "sigma.eps", state.hyper3.sigma_eps, 0.0, 0.5);

    for (std::size_t c = 0; c < state.countries.size(); ++c) {
        const auto& cs = state.countries[c];
        const std::string tag = "country " + std::to_string(cs.code) + ": ";
        const auto& q = cs.p2;

        detail::check_bounds(out, tag + "d_c", q.d, db.lo, db.hi, true);
        detail::check_bounds(out, tag + "Triangle4", q.Triangle[3], kTriangle4Lo, kTriangle4Hi, true);

        const double psum = q.p[0] + q.p[1] + q.p[2];
        if (std::abs(psum - 1.0) > 1e-9)
            out.push_back(tag + "share normalization violated: sum p = " + std::to_string(psum));
        const double span = q.U - q.Triangle[3];
        for (int i = 0; i < 3; ++i) {
            if (std::abs(q.Triangle[i] - q.p[i] * span) > 1e-12)
                out.push_back(tag + "Triangle" + std::to_string(i + 1) +
                              " inconsistent with share reconstruction");
        }
        if (std::abs(from_logit_scale(q.d_star, db.lo, db.hi) - q.d) > 1e-12)
            out.push_back(tag + "d_star transform inconsistent with d_c");
        if (std::abs(from_logit_scale(q.Triangle4_star, kTriangle4Lo, kTriangle4Hi) - q.Triangle[3]) > 1e-12)
            out.push_back(tag + "Triangle4_star transform inconsistent with Triangle4");

        if (cs.markers.tau_in_grid() && cs.markers.lambda_reached(state.grid.n_periods) &&
            !(cs.markers.tau < cs.markers.lambda))
            out.push_back(tag + "tau must precede lambda");

        if (cs.in_phase3) {
            detail::check_bounds(out, tag + "rho_c", cs.p3.rho, 0.0, 1.0, true);
            if (cs.p3.mu < 0.0) out.push_back(tag + "mu_c must be nonnegative");
        }
        if (c < state.tfr.size()) {
            if (static_cast<int>(state.tfr[c].size()) != state.grid.n_periods) {
                out.push_back(tag + "latent series length does not match grid");
            } else {
                for (double f : state.tfr[c]) {
                    if (!(f > 0.0) || !std::isfinite(f)) {
                        out.push_back(tag + "latent TFR must be positive and finite");
                        break;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace tfr
