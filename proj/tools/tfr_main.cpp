// Command-line front end for the TFR estimation and projection library.

#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tfr/tfr.hpp"

namespace {

// Countries with near-perfect vital registration histories (mostly Europe,
// plus Australia, Canada, Japan, Korea, New Zealand, Turkey and the US).
const std::vector<int> kProductionUnbiasedVr = {36,  40,  56,  124, 203, 208, 246, 250, 276,
                                                300, 352, 372, 380, 392, 410, 428, 442, 528,
                                                554, 578, 620, 724, 752, 756, 792, 826, 840};

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::set<tfr::CountryId> parse_codes(const std::string& s) {
    std::set<tfr::CountryId> out;
    for (const auto& item : split_csv_list(s)) out.insert(std::stoi(item));
    return out;
}

std::vector<double> parse_probs(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split_csv_list(s)) out.push_back(std::stod(item));
    return out;
}

/// Tabular output goes to stdout unless --out is given.
class OutputTarget {
  public:
    explicit OutputTarget(const std::string& path) {
        if (!path.empty()) {
            file_.open(path);
            if (!file_) throw tfr::DataError("cannot open output file: " + path);
        }
    }
    std::ostream& stream() { return file_.is_open() ? file_ : std::cout; }

  private:
    std::ofstream file_;
};

void write_summary_csv(const std::vector<tfr::SummaryRow>& rows, std::ostream& out) {
    out << "parameter,mean,sd,naive_se,ts_se,q2.5,q25,q50,q75,q97.5\n";
    for (const auto& r : rows) {
        out << r.name << ',' << tfr::format_trace_value(r.mean) << ','
            << tfr::format_trace_value(r.sd) << ',' << tfr::format_trace_value(r.naive_se) << ','
            << tfr::format_trace_value(r.ts_se);
        for (double q : r.quantiles) out << ',' << tfr::format_trace_value(q);
        out << '\n';
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic TFR estimation and projection"};
    app.require_subcommand(1);

    // --- run ---------------------------------------------------------------
    auto* run_cmd = app.add_subcommand("run", "Run a new MCMC estimation");
    std::string run_output, run_raw, run_ref, run_covs = "source,method", run_cont_covs,
                run_source_col = "source", run_unbiased, run_preset;
    tfr::RunConfig rc;
    run_cmd->add_option("--output-dir", run_output, "Simulation directory")->required();
    run_cmd->add_option("--raw-file", run_raw, "Raw TFR observations CSV");
    run_cmd->add_option("--ref-file", run_ref, "Reference TFR CSV")->required();
    run_cmd->add_option("--covariates", run_covs, "Categorical covariate columns (comma list)");
    run_cmd->add_option("--cont-covariates", run_cont_covs,
                        "Continuous covariate columns (comma list)");
    run_cmd->add_option("--source-column", run_source_col, "Column holding the data source");
    run_cmd->add_flag("--annual", rc.annual, "Annual estimation (default five-year)");
    run_cmd->add_flag("--ar-phase2", rc.ar_phase2, "AR(1) transition residuals (annual only)");
    run_cmd->add_flag("--uncertainty", rc.uncertainty, "Estimate past TFR from raw data");
    run_cmd->add_flag("--parallel", rc.parallel, "Run chains in parallel");
    run_cmd->add_option("--iso-unbiased", run_unbiased,
                        "Country codes whose VR records are treated as unbiased");
    auto* opt_chains = run_cmd->add_option("--chains", rc.nr_chains, "Number of MCMC chains");
    auto* opt_iters = run_cmd->add_option("--iters", rc.iters, "Iterations per chain");
    auto* opt_thin = run_cmd->add_option("--thin", rc.thin, "Store every thin-th iteration");
    auto* opt_burnin = run_cmd->add_option("--burnin", rc.burnin,
                                           "Proposal adaptation window (iterations)");
    run_cmd->add_option("--seed", rc.seed, "Master random seed");
    auto* opt_sigma0 = run_cmd->add_option("--sigma0-min", rc.sigma0_min,
                                           "Lower bound of the sigma0 prior");
    run_cmd->add_option("--start-year", rc.start_year, "First estimation year");
    run_cmd->add_option("--present-year", rc.present_year, "Last estimation year");
    run_cmd->add_option("--preset", run_preset, "Named defaults; only 'production'");

    // --- continue ----------------------------------------------------------
    auto* cont_cmd = app.add_subcommand("continue", "Extend an existing simulation");
    std::string cont_output;
    long cont_iters = 0;
    cont_cmd->add_option("--output-dir", cont_output, "Simulation directory")->required();
    cont_cmd->add_option("--iters", cont_iters, "Additional iterations")->required();

    // --- extra -------------------------------------------------------------
    auto* extra_cmd = app.add_subcommand("extra",
                                         "Re-estimate selected countries against frozen "
                                         "world parameters");
    std::string extra_output, extra_countries, extra_raw, extra_covs, extra_cont_covs,
                extra_unbiased;
    tfr::ExtraConfig xc;
    extra_cmd->add_option("--output-dir", extra_output, "Simulation directory")->required();
    extra_cmd->add_option("--countries", extra_countries, "Country codes (comma list)")
        ->required();
    extra_cmd->add_option("--raw-file", extra_raw, "Replacement raw TFR CSV");
    extra_cmd->add_option("--covariates", extra_covs, "Categorical covariates for the new fit");
    extra_cmd->add_option("--cont-covariates", extra_cont_covs, "Continuous covariates");
    extra_cmd->add_option("--iso-unbiased", extra_unbiased, "Unbiased-VR codes for the new fit");
    extra_cmd->add_option("--iters", xc.iters, "Country sweeps (default: stored rows)");
    extra_cmd->add_option("--burnin", xc.burnin, "Warm-up country sweeps");

    // --- predict -----------------------------------------------------------
    auto* pred_cmd = app.add_subcommand("predict", "Generate projection trajectories");
    std::string pred_output;
    tfr::PredictConfig pc;
    pred_cmd->add_option("--output-dir", pred_output, "Simulation directory")->required();
    pred_cmd->add_option("--end-year", pc.end_year, "Projection end year")->required();
    pred_cmd->add_option("--burnin", pc.burnin, "Iterations to discard per chain");
    pred_cmd->add_option("--nr-traj", pc.n_traj, "Number of trajectories");
    pred_cmd->add_flag("--uncertainty", pc.uncertainty,
                       "Start each trajectory from a sampled past path");

    // --- summarize ---------------------------------------------------------
    auto* sum_cmd = app.add_subcommand("summarize", "Posterior summary statistics");
    std::string sum_output, sum_params, sum_out;
    int sum_country = 0, sum_thin = 1;
    long sum_burnin = 0;
    sum_cmd->add_option("--output-dir", sum_output, "Simulation directory")->required();
    sum_cmd->add_option("--params", sum_params, "Parameter names (comma list; default: all)");
    sum_cmd->add_option("--country", sum_country, "Country code for country-specific parameters");
    sum_cmd->add_option("--thin", sum_thin, "Extra thinning (iterations)");
    sum_cmd->add_option("--burnin", sum_burnin, "Burn-in (iterations)");
    sum_cmd->add_option("--out", sum_out, "Write CSV here instead of stdout");

    // --- estimate ----------------------------------------------------------
    auto* est_cmd = app.add_subcommand("estimate", "Past-TFR estimation export");
    std::string est_output, est_probs, est_out;
    int est_country = 0, est_thin = 1;
    long est_burnin = 0;
    bool est_matrix = false;
    est_cmd->add_option("--output-dir", est_output, "Simulation directory")->required();
    est_cmd->add_option("--country", est_country, "Country code")->required();
    est_cmd->add_option("--probs", est_probs, "Quantile levels (comma list)");
    est_cmd->add_flag("--matrix", est_matrix, "Emit the trajectory matrix instead of quantiles");
    est_cmd->add_option("--thin", est_thin, "Extra thinning (iterations)");
    est_cmd->add_option("--burnin", est_burnin, "Burn-in (iterations)");
    est_cmd->add_option("--out", est_out, "Write CSV here instead of stdout");

    // --- table -------------------------------------------------------------
    auto* table_cmd = app.add_subcommand("table", "Projection quantile table");
    std::string table_output, table_out, table_probs;
    int table_country = 0;
    table_cmd->add_option("--output-dir", table_output, "Simulation directory")->required();
    table_cmd->add_option("--country", table_country, "Country code")->required();
    table_cmd->add_option("--probs", table_probs, "Quantile levels (default 0.025,0.1,0.9,0.975)");
    table_cmd->add_option("--out", table_out, "Write CSV here instead of stdout");

    // --- bias-sd -----------------------------------------------------------
    auto* bias_cmd = app.add_subcommand("bias-sd", "Observation bias/sd table");
    std::string bias_output, bias_out;
    int bias_country = 0;
    bias_cmd->add_option("--output-dir", bias_output, "Simulation directory")->required();
    bias_cmd->add_option("--country", bias_country, "Country code")->required();
    bias_cmd->add_option("--out", bias_out, "Write CSV here instead of stdout");

    // --- diagnose ----------------------------------------------------------
    auto* diag_cmd = app.add_subcommand("diagnose", "Convergence assessment");
    std::string diag_output, diag_out;
    int diag_thin = 1;
    long diag_burnin = 0;
    bool diag_express = false;
    diag_cmd->add_option("--output-dir", diag_output, "Simulation directory")->required();
    diag_cmd->add_option("--thin", diag_thin, "Extra thinning (iterations)");
    diag_cmd->add_option("--burnin", diag_burnin, "Burn-in (iterations)");
    diag_cmd->add_flag("--express", diag_express, "Skip country-specific parameters");
    diag_cmd->add_option("--out", diag_out, "Write the report here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return 1;
    }

    try {
        if (*run_cmd) {
            if (run_preset == "production") {
                if (!*opt_chains) rc.nr_chains = 3;
                if (!*opt_iters) rc.iters = 62000;
                if (!*opt_thin) rc.thin = 10;
                if (!*opt_burnin) rc.burnin = 2000;
                if (!*opt_sigma0) rc.sigma0_min = 0.04;
                if (run_unbiased.empty())
                    rc.unbiased_vr.insert(kProductionUnbiasedVr.begin(),
                                          kProductionUnbiasedVr.end());
            } else if (!run_preset.empty()) {
                throw tfr::ConfigError("unknown preset '" + run_preset + "'");
            }
            rc.output_dir = run_output;
            rc.raw_file = run_raw;
            rc.ref_file = run_ref;
            rc.covariates = split_csv_list(run_covs);
            rc.cont_covariates = split_csv_list(run_cont_covs);
            rc.source_column = run_source_col;
            if (!run_unbiased.empty()) rc.unbiased_vr = parse_codes(run_unbiased);
            tfr::ChainStore store = tfr::run(rc);
            std::cout << "run complete: " << store.meta().nr_chains << " chains x "
                      << store.meta().iters << " iterations in " << store.dir().string() << "\n";
        } else if (*cont_cmd) {
            tfr::ChainStore store = tfr::continue_run(cont_output, cont_iters);
            std::cout << "continuation complete: chains now at " << store.meta().iters
                      << " iterations\n";
        } else if (*extra_cmd) {
            for (int code : parse_codes(extra_countries)) xc.countries.push_back(code);
            xc.raw_file = extra_raw;
            xc.covariates = split_csv_list(extra_covs);
            xc.cont_covariates = split_csv_list(extra_cont_covs);
            if (!extra_unbiased.empty()) xc.unbiased_vr = parse_codes(extra_unbiased);
            tfr::run_extra(extra_output, xc);
            std::cout << "re-estimated " << xc.countries.size() << " countr"
                      << (xc.countries.size() == 1 ? "y" : "ies") << "\n";
        } else if (*pred_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(pred_output);
            const tfr::TrajectorySet set = tfr::predict(store, pc);
            std::cout << "prediction complete: " << set.countries.size() << " countries, "
                      << (set.paths.empty() ? 0 : set.paths[0].size()) << " trajectories to "
                      << set.grid.last_year() << "\n";
        } else if (*sum_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(sum_output);
            std::vector<std::string> params = split_csv_list(sum_params);
            if (params.empty()) {
                if (sum_country == 0) {
                    params = tfr::phase2_hyper_names(store.meta().ar_phase2);
                    for (const auto& n : tfr::phase3_hyper_names()) params.push_back(n);
                } else {
                    params = {"U", "d", "Triangle_c4", "gamma"};
                }
            }
            const auto rows = tfr::summarize(store, params, sum_country, sum_thin, sum_burnin);
            OutputTarget target(sum_out);
            write_summary_csv(rows, target.stream());
        } else if (*est_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(est_output);
            const auto probs = parse_probs(est_probs);
            const auto res =
                tfr::estimation_quantiles(store, est_country, probs, est_thin, est_burnin);
            OutputTarget target(est_out);
            auto& out = target.stream();
            if (est_matrix || probs.empty()) {
                for (std::size_t y = 0; y < res.years.size(); ++y)
                    out << (y ? "," : "") << res.years[y];
                out << '\n';
                for (const auto& row : res.trajectories) {
                    for (std::size_t i = 0; i < row.size(); ++i)
                        out << (i ? "," : "") << tfr::format_trace_value(row[i]);
                    out << '\n';
                }
            } else {
                out << "year";
                for (double p : probs) out << ',' << tfr::format_trace_value(p);
                out << '\n';
                for (std::size_t t = 0; t < res.years.size(); ++t) {
                    out << res.years[t];
                    for (double q : res.quantiles[t]) out << ',' << tfr::format_trace_value(q);
                    out << '\n';
                }
            }
        } else if (*table_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(table_output);
            const tfr::TrajectorySet set = tfr::load_prediction(store);
            const std::vector<double> levels =
                table_probs.empty() ? std::vector<double>{0.025, 0.1, 0.9, 0.975}
                                    : parse_probs(table_probs);
            const auto table = tfr::trajectory_table(set, table_country, levels);
            OutputTarget target(table_out);
            tfr::write_trajectory_table_csv(table, target.stream());
        } else if (*bias_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(bias_output);
            const auto& tables = store.meta().bias_sd_tables;
            const auto it = tables.find(bias_country);
            if (it == tables.end())
                throw tfr::ConfigError("no bias/sd table for country " +
                                       std::to_string(bias_country));
            OutputTarget target(bias_out);
            auto& out = target.stream();
            for (const auto& name : store.meta().covariates) out << name << ',';
            for (const auto& name : store.meta().cont_covariates) out << name << ',';
            out << "bias,sd,n_obs\n";
            for (const auto& row : it->second) {
                for (const auto& v : row.combination) out << v << ',';
                out << tfr::format_trace_value(row.bias) << ','
                    << tfr::format_trace_value(row.sd) << ',' << row.n_obs << '\n';
            }
        } else if (*diag_cmd) {
            tfr::ChainStore store = tfr::ChainStore::open(diag_output);
            const auto res = tfr::diagnose(store, diag_thin, diag_burnin, diag_express);
            OutputTarget target(diag_out);
            auto& out = target.stream();
            out << "group,parameter,psrf,converged\n";
            for (const auto& e : res.hyper)
                out << "hyper," << e.name << ',' << tfr::format_trace_value(e.psrf) << ','
                    << (e.converged ? 1 : 0) << '\n';
            for (const auto& e : res.country)
                out << "country," << e.name << ',' << tfr::format_trace_value(e.psrf) << ','
                    << (e.converged ? 1 : 0) << '\n';
            out << "latent_converged_share," << tfr::format_trace_value(res.latent_share)
                << ",,\n";
            out << "verdict," << (res.converged ? "converged" : "not-converged") << ",,\n";
        }
    } catch (const tfr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const tfr::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const tfr::IntegrityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
