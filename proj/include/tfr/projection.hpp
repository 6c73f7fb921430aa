#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "tfr/phase2.hpp"
#include "tfr/rng.hpp"
#include "tfr/store.hpp"

namespace tfr {

struct PredictConfig {
    int end_year = 2100;
    long burnin = 0;       // iterations to discard per chain
    int n_traj = 1000;
    bool uncertainty = false;
};

/// In projected periods a trajectory leaves the transition model at the first
/// increase of TFR below 2; Phase III is absorbing.
inline bool phase_switch_rule(double prev_f, double new_f) {
    return new_f > prev_f && new_f < 2.0;
}

inline constexpr double kTrajectoryFloor = 0.5;

/// Per-period quantile table of a country's trajectories: median, requested
/// quantile levels, and the +-0.5 child scenario columns (defined for
/// projected periods only; past periods report NA).
struct TrajectoryTable {
    std::vector<int> years;
    std::vector<std::string> columns;              // median, <levels...>, -0.5child, +0.5child
    std::vector<std::vector<double>> values;       // per year; NaN encodes NA
};

inline TrajectoryTable trajectory_table(const TrajectorySet& set, CountryId country,
                                        const std::vector<double>& levels = {0.025, 0.1, 0.9,
                                                                             0.975}) {
    int ci = -1;
    for (std::size_t i = 0; i < set.countries.size(); ++i)
        if (set.countries[i] == country) ci = static_cast<int>(i);
    if (ci < 0)
        throw ConfigError("trajectory_table: unknown country " + std::to_string(country));

    TrajectoryTable table;
    table.columns.push_back("median");
    for (double l : levels) table.columns.push_back(format_trace_value(l));
    table.columns.push_back("-0.5child");
    table.columns.push_back("+0.5child");

    const auto& paths = set.paths[ci];
    const int first_period = set.past_posterior ? 0 : set.n_past_periods - 1;
    for (int t = first_period; t < set.grid.n_periods; ++t) {
        std::vector<double> sample;
        sample.reserve(paths.size());
        for (const auto& p : paths) sample.push_back(p[t]);
        std::vector<double> row;
        const double med = quantile(sample, 0.5);
        row.push_back(med);
        for (double l : levels) row.push_back(quantile(sample, l));
        const bool projected = t >= set.n_past_periods;
        row.push_back(projected ? med - 0.5 : std::numeric_limits<double>::quiet_NaN());
        row.push_back(projected ? med + 0.5 : std::numeric_limits<double>::quiet_NaN());
        table.years.push_back(set.grid.year_of(t));
        table.values.push_back(std::move(row));
    }
    return table;
}

inline void write_trajectory_table_csv(const TrajectoryTable& table, std::ostream& out) {
    out << "year";
    for (const auto& c : table.columns) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < table.years.size(); ++i) {
        out << table.years[i];
        for (double v : table.values[i]) {
            out << ',';
            if (std::isnan(v)) {
                out << "NA";
            } else {
                out << format_trace_value(v);
            }
        }
        out << '\n';
    }
}

namespace detail_proj {

constexpr std::uint64_t kPredictStreamOffset = 5000;

/// Loaded traces keyed by bare parameter name (no .txt suffix);
/// country-specific parameters use "<param>_country<code>".
struct ChainTraces {
    std::map<std::string, std::vector<std::vector<double>>> params;

    const std::vector<std::vector<double>>& get(const std::string& name) const {
        const auto it = params.find(name);
        if (it == params.end()) throw IntegrityError("predict: missing trace " + name);
        return it->second;
    }
};

inline std::string country_param_key(const std::string& param, CountryId code) {
    return param + "_country" + std::to_string(code);
}

}  // namespace detail_proj

/// Generates posterior TFR trajectories to end_year from a persisted
/// simulation: discards `burnin` iterations per chain, pools the chains,
/// selects n_traj equally spaced samples, and iterates each sampled past
/// path forward under its sampled parameters. Results are persisted under
/// predictions/ plus a thinned_mcmc_<thin>_<burnin> subtree.
inline TrajectorySet predict(ChainStore& store, const PredictConfig& cfg, bool persist = true) {
    const StoreMeta& meta = store.meta();
    if (cfg.uncertainty && !meta.uncertainty)
        throw ConfigError("predict: uncertainty requested but the simulation stores no latent TFR");
    if (cfg.n_traj < 1) throw ConfigError("predict: nr_traj must be positive");
    store.verify_integrity();

    const TimeGrid& grid = meta.grid;
    const int n_past = grid.n_periods;
    const int present = grid.last_year();
    if (cfg.end_year <= present)
        throw ConfigError("predict: end year must lie beyond the estimation span");
    const int n_proj = (cfg.end_year - present) / grid.step;

    const long rows = meta.stored_rows();
    const long burnin_rows = cfg.burnin / meta.thin;
    if (burnin_rows >= rows)
        throw ConfigError("predict: burnin of " + std::to_string(cfg.burnin) +
                          " iterations leaves no stored samples");
    const long kept = rows - burnin_rows;
    const long pool = kept * meta.nr_chains;
    if (pool < cfg.n_traj)
        throw ConfigError("predict: " + std::to_string(cfg.n_traj) +
                          " trajectories requested but only " + std::to_string(pool) +
                          " samples are available");
    const long traj_thin = std::max<long>(1, pool / cfg.n_traj);

    // Load every needed trace per chain.
    std::vector<detail_proj::ChainTraces> chains(meta.nr_chains);
    for (int k = 0; k < meta.nr_chains; ++k) {
        auto& tr = chains[k].params;
        const auto dir2 = store.chain_dir(k + 1);
        const auto dir3 = store.phase3_chain_dir(k + 1);
        for (const auto& n : {"sigma0", "a_sd", "b_sd", "S_sd", "const_sd"})
            tr[n] = read_trace(dir2 / (std::string(n) + ".txt"));
        if (meta.ar_phase2) tr["rho_phase2"] = read_trace(dir2 / "rho_phase2.txt");
        for (const auto& n : {"sigma.eps", "mu", "rho", "sigma.mu", "sigma.rho"})
            tr[n] = read_trace(dir3 / (std::string(n) + ".txt"));
        for (const auto& c : meta.countries) {
            for (const auto& p : {"U", "d", "Triangle_c4", "gamma"})
                tr[detail_proj::country_param_key(p, c.code)] =
                    read_trace(dir2 / country_file_name(p, c.code));
            if (meta.uncertainty)
                tr[detail_proj::country_param_key("tfr", c.code)] =
                    read_trace(dir2 / country_file_name("tfr", c.code));
            if (store.phase3_participant(c)) {
                tr[detail_proj::country_param_key("mu.c", c.code)] =
                    read_trace(dir3 / country_file_name("mu.c", c.code));
                tr[detail_proj::country_param_key("rho.c", c.code)] =
                    read_trace(dir3 / country_file_name("rho.c", c.code));
            }
        }
    }

    // Equally spaced selection over the pooled post-burn-in rows, chain-major.
    std::vector<std::pair<int, long>> picks;  // (chain index, row index)
    picks.reserve(cfg.n_traj);
    for (int j = 0; j < cfg.n_traj; ++j) {
        const long flat = static_cast<long>(j) * traj_thin;
        picks.emplace_back(static_cast<int>(flat / kept), burnin_rows + flat % kept);
    }

    TrajectorySet set;
    set.grid = TimeGrid{grid.start_year, grid.step, n_past + n_proj};
    set.n_past_periods = n_past;
    set.past_posterior = cfg.uncertainty;
    RngStream rng(meta.seed, detail_proj::kPredictStreamOffset);

    for (std::size_t ci = 0; ci < meta.countries.size(); ++ci) {
        const auto& cm = meta.countries[ci];
        const bool has_p3_trace = store.phase3_participant(cm);
        set.countries.push_back(cm.code);
        std::vector<std::vector<double>> paths(cfg.n_traj,
                                               std::vector<double>(n_past + n_proj, 0.0));

        for (int j = 0; j < cfg.n_traj; ++j) {
            const auto [k, r] = picks[j];
            const auto& tr = chains[k];
            auto scalar = [&](const std::string& name) { return tr.get(name)[r][0]; };

            Phase2CountryParams q;
            q.U = scalar(detail_proj::country_param_key("U", cm.code));
            q.d = scalar(detail_proj::country_param_key("d", cm.code));
            q.Triangle[3] = scalar(detail_proj::country_param_key("Triangle_c4", cm.code));
            {
                const auto& g = tr.get(detail_proj::country_param_key("gamma", cm.code))[r];
                const double m = std::max({g[0], g[1], g[2]});
                double tot = 0.0;
                for (int i = 0; i < 3; ++i) tot += std::exp(g[i] - m);
                const double span = q.U - q.Triangle[3];
                for (int i = 0; i < 3; ++i) q.p[i] = std::exp(g[i] - m) / tot;
                for (int i = 0; i < 3; ++i) q.Triangle[i] = q.p[i] * span;
            }
            Phase2Hyper hy;
            hy.sigma0 = scalar("sigma0");
            hy.a_sd = scalar("a_sd");
            hy.b_sd = scalar("b_sd");
            hy.S_sd = scalar("S_sd");
            hy.const_sd = scalar("const_sd");
            const double phi = meta.ar_phase2 ? scalar("rho_phase2") : 0.0;
            const double sigma_eps = scalar("sigma.eps");

            bool in_phase3 = cm.lambda < n_past;
            bool p3_params_set = false;
            double mu_c = 0.0, rho_c = 0.0;
            if (has_p3_trace) {
                mu_c = scalar(detail_proj::country_param_key("mu.c", cm.code));
                rho_c = scalar(detail_proj::country_param_key("rho.c", cm.code));
                p3_params_set = true;
            }
            auto ensure_p3_params = [&]() {
                if (p3_params_set) return;
                // Countries without estimated Phase III parameters draw them
                // from the sampled world distribution on entry.
                const double sigma_mu = std::max(scalar("sigma.mu"), 1e-12);
                const double sigma_rho = std::max(scalar("sigma.rho"), 1e-12);
                mu_c = rng.truncated_normal(scalar("mu"), sigma_mu, 0.0, kMuUpper);
                rho_c = rng.truncated_normal(scalar("rho"), sigma_rho, 0.0, 1.0);
                p3_params_set = true;
            };
            if (in_phase3) ensure_p3_params();

            auto& path = paths[j];
            if (cfg.uncertainty) {
                const auto& latent = tr.get(detail_proj::country_param_key("tfr", cm.code))[r];
                for (int t = 0; t < n_past; ++t) path[t] = latent[t];
            } else {
                for (int t = 0; t < n_past; ++t) path[t] = cm.reference[t];
            }

            // AR carryover: the distortion of the last estimation transition,
            // recomputed from this sample's final two levels and drift.
            double eps_prev = 0.0;
            if (meta.ar_phase2 && !in_phase3 && n_past >= 2) {
                const double f_prev = path[n_past - 2];
                const double f_last = path[n_past - 1];
                eps_prev = f_last - f_prev + double_logistic(f_prev, q);
            }

            for (int t = n_past - 1; t < n_past + n_proj - 1; ++t) {
                const double f_t = path[t];
                double f_next;
                if (!in_phase3) {
                    const double sd = distortion_sd(f_t, set.grid.year_of(t), hy);
                    double eps = sd * rng.normal();
                    if (meta.ar_phase2) eps = phi * eps_prev + eps;
                    f_next = f_t - double_logistic(f_t, q) + eps;
                    eps_prev = eps;
                    if (phase_switch_rule(f_t, f_next)) {
                        in_phase3 = true;
                        ensure_p3_params();
                    }
                } else {
                    f_next = mu_c + rho_c * (f_t - mu_c) + sigma_eps * rng.normal();
                }
                path[t + 1] = std::max(f_next, kTrajectoryFloor);
            }
        }
        set.paths.push_back(std::move(paths));
    }

    if (persist) {
        // Thinned subtree: the selected rows collapsed into a single chain.
        const fs::path thin_dir = store.thinned_dir(static_cast<int>(traj_thin), cfg.burnin);
        fs::remove_all(thin_dir);
        fs::create_directories(thin_dir / "mc1");
        fs::create_directories(thin_dir / "phaseIII" / "mc1");
        {
            std::ofstream out(thin_dir / ChainStore::kMetaFile);
            out << json{{"thin", traj_thin},
                        {"burnin", cfg.burnin},
                        {"n_traj", cfg.n_traj},
                        {"source_iters", meta.iters}}
                       .dump(1)
                << '\n';
        }
        auto write_selected = [&](const std::string& name, const fs::path& dest) {
            std::vector<std::vector<double>> rows_out;
            rows_out.reserve(picks.size());
            for (const auto& [k, r] : picks) rows_out.push_back(chains[k].get(name)[r]);
            append_trace_rows(dest / (name + ".txt"), rows_out);
        };
        for (const auto& n : phase2_hyper_names(meta.ar_phase2)) {
            if (chains[0].params.count(n)) write_selected(n, thin_dir / "mc1");
        }
        for (const auto& n : phase3_hyper_names()) write_selected(n, thin_dir / "phaseIII" / "mc1");
        for (const auto& c : meta.countries) {
            for (const auto& p : {"U", "d", "Triangle_c4", "gamma"})
                write_selected(detail_proj::country_param_key(p, c.code), thin_dir / "mc1");
            if (meta.uncertainty)
                write_selected(detail_proj::country_param_key("tfr", c.code), thin_dir / "mc1");
            if (store.phase3_participant(c)) {
                write_selected(detail_proj::country_param_key("mu.c", c.code), thin_dir / "phaseIII" / "mc1");
                write_selected(detail_proj::country_param_key("rho.c", c.code), thin_dir / "phaseIII" / "mc1");
            }
        }

        const fs::path pred_dir = store.predictions_dir();
        fs::create_directories(pred_dir);
        {
            std::ofstream out(pred_dir / ChainStore::kMetaFile);
            out << json{{"end_year", cfg.end_year},
                        {"burnin", cfg.burnin},
                        {"n_traj", cfg.n_traj},
                        {"thin", traj_thin},
                        {"uncertainty", cfg.uncertainty},
                        {"n_past_periods", n_past}}
                       .dump(1)
                << '\n';
        }
        for (std::size_t ci = 0; ci < set.countries.size(); ++ci) {
            std::ofstream out(pred_dir /
                              ("traj_country" + std::to_string(set.countries[ci]) + ".csv"));
            for (int t = n_past; t < set.grid.n_periods; ++t) {
                out << (t > n_past ? "," : "") << set.grid.year_of(t);
            }
            out << '\n';
            for (const auto& path : set.paths[ci]) {
                for (int t = n_past; t < set.grid.n_periods; ++t) {
                    if (t > n_past) out << ',';
                    out << format_trace_value(path[t]);
                }
                out << '\n';
            }
        }
        for (CountryId code : set.countries) {
            std::ofstream out(pred_dir / ("quantiles_country" + std::to_string(code) + ".csv"));
            write_trajectory_table_csv(trajectory_table(set, code), out);
        }
    }
    return set;
}

/// Rebuilds the TrajectorySet of a persisted prediction: projected periods
/// from predictions/, past periods from the thinned latent traces (with
/// uncertainty) or the reference series.
inline TrajectorySet load_prediction(const ChainStore& store) {
    const StoreMeta& meta = store.meta();
    const fs::path pred_meta_path = store.predictions_dir() / ChainStore::kMetaFile;
    std::ifstream in(pred_meta_path);
    if (!in) throw IntegrityError("no prediction found (missing " + pred_meta_path.string() + ")");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IntegrityError("corrupt prediction meta: " + std::string(e.what()));
    }
    const int end_year = j.at("end_year").get<int>();
    const long burnin = j.at("burnin").get<long>();
    const int n_traj = j.at("n_traj").get<int>();
    const int thin = j.at("thin").get<int>();
    const bool uncertainty = j.at("uncertainty").get<bool>();
    const int n_past = j.at("n_past_periods").get<int>();
    const int n_proj = (end_year - meta.grid.last_year()) / meta.grid.step;

    TrajectorySet set;
    set.grid = TimeGrid{meta.grid.start_year, meta.grid.step, n_past + n_proj};
    set.n_past_periods = n_past;
    set.past_posterior = uncertainty;

    for (const auto& cm : meta.countries) {
        set.countries.push_back(cm.code);
        std::vector<std::vector<double>> paths(n_traj, std::vector<double>(n_past + n_proj, 0.0));
        std::vector<std::vector<double>> latents;
        if (uncertainty) {
            latents = read_trace(store.thinned_dir(thin, burnin) / "mc1" /
                                 country_file_name("tfr", cm.code));
            if (static_cast<int>(latents.size()) != n_traj)
                throw IntegrityError("thinned latent trace row count does not match prediction");
        }
        const csv::Table t = csv::read_file(
            (store.predictions_dir() / ("traj_country" + std::to_string(cm.code) + ".csv"))
                .string());
        if (static_cast<int>(t.rows.size()) != n_traj)
            throw IntegrityError("trajectory file row count does not match prediction meta");
        for (int i = 0; i < n_traj; ++i) {
            for (int p = 0; p < n_past; ++p)
                paths[i][p] = uncertainty ? latents[i][p] : cm.reference[p];
            for (int p = 0; p < n_proj; ++p) {
                double v;
                if (!csv::parse_double(t.rows[i][p], v))
                    throw IntegrityError("non-numeric value in trajectory file for country " +
                                         std::to_string(cm.code));
                paths[i][n_past + p] = v;
            }
        }
        set.paths.push_back(std::move(paths));
    }
    return set;
}

}  // namespace tfr
