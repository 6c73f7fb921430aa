#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tfr/store.hpp"

namespace tfr {

inline constexpr double kPsrfThreshold = 1.1;
inline constexpr double kLatentConvergedShare = 0.95;

/// Potential scale reduction factor over a set of equal-length sequences,
/// floored at 1. Zero-variance sequences count as converged when their means
/// agree (constant chains are trivially mixed) and as divergent otherwise.
inline double psrf(const std::vector<std::vector<double>>& seqs) {
    const std::size_t m = seqs.size();
    if (m < 2) throw ConfigError("psrf needs at least two sequences");
    std::size_t n = seqs[0].size();
    for (const auto& s : seqs) n = std::min(n, s.size());
    if (n < 2) throw ConfigError("psrf needs at least two samples per sequence");

    std::vector<double> means(m), vars(m);
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += seqs[j][i];
        means[j] = s / n;
        double v = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = seqs[j][i] - means[j];
            v += d * d;
        }
        vars[j] = v / (n - 1);
    }
    double w = 0.0;
    for (double v : vars) w += v;
    w /= m;
    double grand = 0.0;
    for (double mu : means) grand += mu;
    grand /= m;
    double b_over_n = 0.0;
    for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
    b_over_n /= (m - 1);

    if (w <= 0.0) {
        return b_over_n <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    }
    const double var_plus = (static_cast<double>(n) - 1.0) / n * w + b_over_n;
    return std::max(1.0, std::sqrt(var_plus / w));
}

/// Split-chain PSRF: each chain is halved before the comparison, so within-
/// chain drift also registers as non-convergence.
inline double split_psrf(const std::vector<std::vector<double>>& chains) {
    std::vector<std::vector<double>> halves;
    for (const auto& c : chains) {
        const std::size_t half = c.size() / 2;
        halves.emplace_back(c.begin(), c.begin() + half);
        halves.emplace_back(c.end() - half, c.end());
    }
    return psrf(halves);
}

/// Geyer initial-positive-sequence estimate of the asymptotic variance of
/// the mean of a stationary sequence.
inline double ips_asymptotic_variance(const std::vector<double>& x) {
    const std::size_t n = x.size();
    if (n < 4) return variance_of(x);
    const double m = mean_of(x);
    auto autocov = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t i = 0; i + k < n; ++i) s += (x[i] - m) * (x[i + k] - m);
        return s / n;
    };
    const double g0 = autocov(0);
    if (g0 <= 0.0) return 0.0;
    double sigma2 = -g0;
    for (std::size_t j = 0; 2 * j + 1 < n; ++j) {
        const double pair = autocov(2 * j) + autocov(2 * j + 1);
        if (pair <= 0.0) break;
        sigma2 += 2.0 * pair;
    }
    return std::max(sigma2, 0.0);
}

// ---------------------------------------------------------------------------
// Trace selection helpers shared by diagnose/summarize/estimation_quantiles.

namespace detail_diag {

/// Applies the requested (thin, burnin) to one chain's stored rows. Both are
/// expressed in iterations; stored rows sit every meta.thin iterations apart.
inline std::vector<std::vector<double>> select_rows(const std::vector<std::vector<double>>& rows,
                                                    int store_thin, int thin, long burnin) {
    const long burnin_rows = burnin / store_thin;
    const long stride = std::max(1L, static_cast<long>(thin) / store_thin);
    std::vector<std::vector<double>> out;
    for (std::size_t r = burnin_rows; r < rows.size(); r += stride) out.push_back(rows[r]);
    return out;
}

inline std::vector<double> column(const std::vector<std::vector<double>>& rows, int c) {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (c >= static_cast<int>(r.size()))
            throw IntegrityError("trace row lacks requested column");
        out.push_back(r[c]);
    }
    return out;
}

}  // namespace detail_diag

// ---------------------------------------------------------------------------
// Convergence diagnosis.

struct DiagnoseEntry {
    std::string name;
    double psrf = 1.0;
    bool converged = true;
};

struct DiagnoseResult {
    std::vector<DiagnoseEntry> hyper;
    std::vector<DiagnoseEntry> country;   // non-latent country parameters
    std::vector<DiagnoseEntry> latent;    // per country and period
    double latent_share = 1.0;            // share of converged latent parameters
    bool express = false;
    bool converged = false;
};

/// Split-chain PSRF over every parameter of the simulation. A parameter
/// converges iff PSRF < 1.1. The verdict requires all hyperparameters, all
/// non-latent country parameters (skipped under express) and at least 95% of
/// the latent TFR parameters to converge. The report is persisted under
/// diagnostics/ keyed by (thin, burnin).
inline DiagnoseResult diagnose(const ChainStore& store, int thin, long burnin,
                               bool express = false) {
    const StoreMeta& meta = store.meta();
    if (meta.nr_chains < 2)
        throw ConfigError("diagnose requires at least 2 chains");
    {
        const long burnin_rows = burnin / meta.thin;
        const long stride = std::max(1L, static_cast<long>(thin) / meta.thin);
        const long kept = (meta.stored_rows() - burnin_rows) / stride;
        if (kept < 100)
            throw ConfigError("diagnose requires at least 100 post-burn-in samples per chain; "
                              "this simulation provides " + std::to_string(std::max(kept, 0L)));
    }

    DiagnoseResult res;
    res.express = express;
    auto gather = [&](const std::string& file, int col, bool phase3) {
        std::vector<std::vector<double>> per_chain;
        for (int k = 1; k <= meta.nr_chains; ++k) {
            const fs::path dir = phase3 ? store.phase3_chain_dir(k) : store.chain_dir(k);
            const auto rows = detail_diag::select_rows(read_trace(dir / file), meta.thin, thin,
                                                       burnin);
            per_chain.push_back(detail_diag::column(rows, col));
        }
        return split_psrf(per_chain);
    };
    auto add = [&](std::vector<DiagnoseEntry>& dest, const std::string& name,
                   const std::string& file, int col, bool phase3) {
        DiagnoseEntry e;
        e.name = name;
        e.psrf = gather(file, col, phase3);
        e.converged = e.psrf < kPsrfThreshold;
        dest.push_back(std::move(e));
    };

    for (const auto& n : phase2_hyper_names(meta.ar_phase2)) {
        if (n == "alpha" || n == "delta") {
            for (int i = 0; i < 3; ++i) add(res.hyper, n + "_" + std::to_string(i + 1),
                                            n + ".txt", i, false);
        } else {
            add(res.hyper, n, n + ".txt", 0, false);
        }
    }
    for (const auto& n : phase3_hyper_names()) add(res.hyper, n, n + ".txt", 0, true);

    if (!express) {
        for (const auto& c : meta.countries) {
            const std::string suffix = "_c" + std::to_string(c.code);
            add(res.country, "U" + suffix, country_file_name("U", c.code), 0, false);
            add(res.country, "d" + suffix, country_file_name("d", c.code), 0, false);
            add(res.country, "Triangle_c4" + suffix, country_file_name("Triangle_c4", c.code), 0,
                false);
            for (int i = 0; i < 3; ++i)
                add(res.country, "gamma_" + std::to_string(i + 1) + suffix,
                    country_file_name("gamma", c.code), i, false);
            if (store.phase3_participant(c)) {
                add(res.country, "mu.c" + suffix, country_file_name("mu.c", c.code), 0, true);
                add(res.country, "rho.c" + suffix, country_file_name("rho.c", c.code), 0, true);
            }
        }
    }

    if (meta.uncertainty) {
        long total = 0, ok = 0;
        for (const auto& c : meta.countries) {
            for (int t = 0; t < meta.grid.n_periods; ++t) {
                DiagnoseEntry e;
                e.name = "tfr_" + std::to_string(t + 1) + "_c" + std::to_string(c.code);
                e.psrf = gather(country_file_name("tfr", c.code), t, false);
                e.converged = e.psrf < kPsrfThreshold;
                ++total;
                if (e.converged) ++ok;
                res.latent.push_back(std::move(e));
            }
        }
        res.latent_share = total > 0 ? static_cast<double>(ok) / total : 1.0;
    }

    bool all_hyper = true;
    for (const auto& e : res.hyper) all_hyper = all_hyper && e.converged;
    bool all_country = true;
    for (const auto& e : res.country) all_country = all_country && e.converged;
    res.converged = all_hyper && (express || all_country) &&
                    res.latent_share >= kLatentConvergedShare;

    const fs::path report = store.diagnostics_dir() /
                            (std::to_string(thin) + "_" + std::to_string(burnin) + ".txt");
    fs::create_directories(store.diagnostics_dir());
    std::ofstream out(report);
    out << "parameter psrf converged\n";
    for (const auto* group : {&res.hyper, &res.country, &res.latent}) {
        for (const auto& e : *group)
            out << e.name << ' ' << format_trace_value(e.psrf) << ' ' << (e.converged ? 1 : 0)
                << '\n';
    }
    out << "latent_converged_share " << format_trace_value(res.latent_share) << '\n';
    out << "verdict " << (res.converged ? "converged" : "not-converged") << '\n';
    return res;
}

// ---------------------------------------------------------------------------
// Posterior summaries.

struct SummaryRow {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double naive_se = 0.0;
    double ts_se = 0.0;
    std::array<double, 5> quantiles{};  // 2.5, 25, 50, 75, 97.5 percent
};

namespace detail_diag {

inline SummaryRow summarize_samples(const std::string& name,
                                    const std::vector<std::vector<double>>& per_chain) {
    SummaryRow row;
    row.name = name;
    std::vector<double> pooled;
    double var_acc = 0.0;
    for (const auto& c : per_chain) {
        pooled.insert(pooled.end(), c.begin(), c.end());
        var_acc += ips_asymptotic_variance(c);
    }
    const double n = static_cast<double>(pooled.size());
    row.mean = mean_of(pooled);
    row.sd = std::sqrt(variance_of(pooled));
    row.naive_se = row.sd / std::sqrt(n);
    row.ts_se = std::sqrt(var_acc / per_chain.size() / n);
    const double levels[5] = {0.025, 0.25, 0.5, 0.75, 0.975};
    for (int i = 0; i < 5; ++i) row.quantiles[i] = quantile(pooled, levels[i]);
    return row;
}

}  // namespace detail_diag

/// Empirical mean, sd, naive and time-series standard errors plus quantiles
/// for the named parameters, pooled over chains after (thin, burnin)
/// selection. With a country, the country-specific parameter names apply
/// ("tfr" expands to every period, "tfr_<t>" selects one).
inline std::vector<SummaryRow> summarize(const ChainStore& store,
                                         const std::vector<std::string>& params,
                                         CountryId country, int thin, long burnin) {
    const StoreMeta& meta = store.meta();
    auto chains_of = [&](const std::string& file, int col, bool phase3) {
        std::vector<std::vector<double>> per_chain;
        for (int k = 1; k <= meta.nr_chains; ++k) {
            const fs::path dir = phase3 ? store.phase3_chain_dir(k) : store.chain_dir(k);
            const auto rows =
                detail_diag::select_rows(read_trace(dir / file), meta.thin, thin, burnin);
            per_chain.push_back(detail_diag::column(rows, col));
        }
        return per_chain;
    };

    std::vector<SummaryRow> out;
    for (const auto& p : params) {
        if (country == 0) {
            const auto& h2 = phase2_hyper_names(meta.ar_phase2);
            const auto& h3 = phase3_hyper_names();
            const bool is_h2 = std::find(h2.begin(), h2.end(), p) != h2.end();
            const bool is_h3 = std::find(h3.begin(), h3.end(), p) != h3.end();
            if (!is_h2 && !is_h3) {
                std::string valid;
                for (const auto& n : h2) valid += n + " ";
                for (const auto& n : h3) valid += n + " ";
                throw ConfigError("unknown parameter '" + p + "'; valid names: " + valid);
            }
            if (p == "alpha" || p == "delta") {
                for (int i = 0; i < 3; ++i)
                    out.push_back(detail_diag::summarize_samples(
                        p + "_" + std::to_string(i + 1), chains_of(p + ".txt", i, false)));
            } else {
                out.push_back(detail_diag::summarize_samples(p, chains_of(p + ".txt", 0, !is_h2)));
            }
            continue;
        }

        if (!meta.find_country(country))
            throw ConfigError("country " + std::to_string(country) + " is not in the simulation");
        const std::string suffix = "_c" + std::to_string(country);
        if (p == "U" || p == "d" || p == "Triangle_c4") {
            out.push_back(detail_diag::summarize_samples(
                p + suffix, chains_of(country_file_name(p, country), 0, false)));
        } else if (p == "gamma") {
            for (int i = 0; i < 3; ++i)
                out.push_back(detail_diag::summarize_samples(
                    "gamma_" + std::to_string(i + 1) + suffix,
                    chains_of(country_file_name("gamma", country), i, false)));
        } else if (p == "mu.c" || p == "rho.c") {
            out.push_back(detail_diag::summarize_samples(
                p + suffix, chains_of(country_file_name(p, country), 0, true)));
        } else if (p == "tfr" || p.rfind("tfr_", 0) == 0) {
            if (!meta.uncertainty)
                throw ConfigError("'tfr' summaries require an uncertainty simulation");
            if (p == "tfr") {
                for (int t = 0; t < meta.grid.n_periods; ++t)
                    out.push_back(detail_diag::summarize_samples(
                        "tfr_" + std::to_string(t + 1) + suffix,
                        chains_of(country_file_name("tfr", country), t, false)));
            } else {
                const int t = std::stoi(p.substr(4)) - 1;
                if (t < 0 || t >= meta.grid.n_periods)
                    throw ConfigError("period index out of range in '" + p + "'");
                out.push_back(detail_diag::summarize_samples(
                    p + suffix, chains_of(country_file_name("tfr", country), t, false)));
            }
        } else {
            throw ConfigError("unknown country parameter '" + p +
                              "'; valid names: U d Triangle_c4 gamma mu.c rho.c tfr tfr_<t>");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Past-TFR estimation views.

struct EstimationResult {
    std::vector<int> years;
    std::vector<std::vector<double>> trajectories;  // pooled draws x periods
    std::vector<double> levels;
    std::vector<std::vector<double>> quantiles;     // period x level
};

/// Pooled posterior sample of a country's past TFR path, with optional
/// pointwise quantiles. Requires an uncertainty-mode simulation.
inline EstimationResult estimation_quantiles(const ChainStore& store, CountryId country,
                                             const std::vector<double>& levels, int thin,
                                             long burnin) {
    const StoreMeta& meta = store.meta();
    if (!meta.uncertainty)
        throw ConfigError("estimation quantiles require an uncertainty simulation");
    if (!meta.find_country(country))
        throw ConfigError("country " + std::to_string(country) + " is not in the simulation");

    EstimationResult res;
    for (int t = 0; t < meta.grid.n_periods; ++t) res.years.push_back(meta.grid.year_of(t));
    for (int k = 1; k <= meta.nr_chains; ++k) {
        const auto rows = detail_diag::select_rows(
            read_trace(store.chain_dir(k) / country_file_name("tfr", country)), meta.thin, thin,
            burnin);
        for (const auto& r : rows) res.trajectories.push_back(r);
    }
    res.levels = levels;
    if (!levels.empty()) {
        res.quantiles.assign(meta.grid.n_periods, std::vector<double>(levels.size(), 0.0));
        for (int t = 0; t < meta.grid.n_periods; ++t) {
            std::vector<double> sample;
            sample.reserve(res.trajectories.size());
            for (const auto& r : res.trajectories) sample.push_back(r[t]);
            for (std::size_t l = 0; l < levels.size(); ++l)
                res.quantiles[t][l] = quantile(sample, levels[l]);
        }
    }
    return res;
}

}  // namespace tfr
