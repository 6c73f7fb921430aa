#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "tfr/ingest.hpp"
#include "tfr/measurement.hpp"
#include "tfr/phases.hpp"
#include "tfr/store.hpp"
#include "tfr/sweep.hpp"

namespace tfr {

struct RunConfig {
    fs::path output_dir;
    std::string raw_file;                      // required when uncertainty is on
    std::string ref_file;
    std::vector<std::string> covariates = {"source", "method"};
    std::vector<std::string> cont_covariates;
    std::string source_column = "source";
    bool annual = false;
    bool ar_phase2 = false;
    bool uncertainty = false;
    bool parallel = false;
    std::set<CountryId> unbiased_vr;
    int nr_chains = 3;
    long iters = 1000;
    int thin = 1;
    long burnin = -1;           // adaptation window; -1 = iters / 5
    double sigma0_min = -1.0;   // -1 = mode default (0.04 annual, 0.01 five-year)
    std::uint64_t seed = 1;
    int start_year = 1950;
    int present_year = 0;       // 0 = last year covered by the reference file
};

struct ExtraConfig {
    std::vector<CountryId> countries;
    std::string raw_file;                      // empty = reuse the stored raw data
    std::vector<std::string> covariates;       // empty = stored covariates
    std::vector<std::string> cont_covariates;
    std::set<CountryId> unbiased_vr;
    long iters = 0;   // 0 = one country sweep per stored row
    long burnin = 0;  // warm-up country sweeps before the first recorded row
};

inline int engine_thread_cap() {
    if (const char* env = std::getenv("TFR_ENGINE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

namespace detail_engine {

constexpr std::uint64_t kPhase3StreamOffset = 100;
constexpr std::uint64_t kExtraStreamOffset = 1000;

inline double gamma_prior_median_sd(double rate) {
    // Median of the implied sd when 1/sd^2 ~ Gamma(1, rate).
    return std::sqrt(rate / std::log(2.0));
}

/// Builds the dynamic model state implied by a meta record: markers,
/// reference-initialized latents and attached observations. Parameters are
/// set to their prior medians/means (chains jitter afterwards).
inline ModelState build_state(const StoreMeta& meta) {
    ModelState s;
    s.annual = meta.annual;
    s.ar_phase2 = meta.ar_phase2;
    s.uncertainty = meta.uncertainty;
    s.sigma0_min = meta.sigma0_min;
    s.grid = meta.grid;

    s.hyper2.chi = prior::kChiMean;
    s.hyper2.psi = gamma_prior_median_sd(prior::kPsiPrecRate);
    s.hyper2.Triangle4 = prior::kTriangle4Mean;
    s.hyper2.delta4 = gamma_prior_median_sd(prior::kDeltaPrecRate);
    for (int i = 0; i < 3; ++i) {
        s.hyper2.alpha[i] = prior::kAlphaMean[i];
        s.hyper2.delta[i] = gamma_prior_median_sd(prior::kDeltaPrecRate);
    }
    s.hyper2.sigma0 = 0.5 * (meta.sigma0_min + kSigma0Upper);
    s.hyper2.a_sd = 0.1;
    s.hyper2.b_sd = 0.1;
    s.hyper2.S_sd = 5.0;
    s.hyper2.const_sd = 1.4;
    s.hyper2.mean_eps_tau = prior::kMeanEpsTauMean;
    s.hyper2.sd_eps_tau = gamma_prior_median_sd(prior::kSdEpsTauPrecRate);
    s.hyper2.rho_phase2 = 0.5;
    s.hyper3 = Phase3Hyper{};

    const auto db = s.d_bounds();
    for (const auto& cm : meta.countries) {
        CountryState cs;
        cs.code = cm.code;
        cs.markers.tau = cm.tau;
        cs.markers.lambda = cm.lambda;
        cs.u_lower = cm.u_lower;
        cs.reference = cm.reference;
        cs.in_phase3 = cm.lambda <= meta.grid.n_periods - 2;
        cs.p2.gamma = s.hyper2.alpha;
        cs.p2.Triangle4_star = s.hyper2.Triangle4;
        cs.p2.d_star = s.hyper2.chi;
        cs.p2.U = cs.markers.tau_in_grid() ? cm.reference[cs.markers.tau]
                                           : 0.5 * (cm.u_lower + kUUpper);
        cs.p2.sync(db);
        cs.p3.mu = s.hyper3.mu_bar;
        cs.p3.rho = s.hyper3.rho_bar;
        s.countries.push_back(std::move(cs));
        s.tfr.push_back(cm.reference);
    }

    s.observations.assign(s.countries.size(), {});
    std::map<CountryId, int> index;
    for (int c = 0; c < s.n_countries(); ++c) index[s.countries[c].code] = c;
    auto attach = [&](const RawObsMeta& o) {
        const auto it = index.find(o.country);
        if (it == index.end()) return;
        const int year = align_year(o.year);
        AttachedObs a;
        a.y = o.tfr;
        a.bias = o.bias;
        a.sd = o.sd;
        if (meta.grid.step == 1) {
            const int t = year - meta.grid.start_year;
            if (t < 0 || t >= meta.grid.n_periods) return;
            a.period = t;
            a.w_next = 0.0;
        } else {
            const double pos = static_cast<double>(year - meta.grid.start_year) / meta.grid.step;
            if (pos < 0.0 || pos > meta.grid.n_periods - 1) return;
            int l = static_cast<int>(std::floor(pos));
            l = std::min(l, meta.grid.n_periods - 2);
            a.period = l;
            a.w_next = pos - l;
        }
        s.observations[it->second].push_back(a);
    };
    std::set<CountryId> has_extra;
    for (const auto& [code, rows] : meta.raw_data_extra) {
        has_extra.insert(code);
        for (const auto& o : rows) attach(o);
    }
    for (const auto& o : meta.raw_data)
        if (!has_extra.count(o.country)) attach(o);
    return s;
}

/// Chain-specific overdispersion of the starting point, drawn from the
/// chain's own stream so runs stay reproducible.
inline void jitter_state(ModelState& s, RngStream& rng) {
    s.hyper2.chi += 0.1 * rng.normal();
    s.hyper2.Triangle4 += 0.1 * rng.normal();
    for (int i = 0; i < 3; ++i) s.hyper2.alpha[i] += 0.1 * rng.normal();
    const auto db = s.d_bounds();
    for (auto& cs : s.countries) {
        for (int i = 0; i < 3; ++i) cs.p2.gamma[i] += 0.05 * rng.normal();
        cs.p2.Triangle4_star += 0.05 * rng.normal();
        cs.p2.d_star += 0.05 * rng.normal();
        cs.p2.sync(db);
    }
}

/// Accumulates trace rows per file name; flushed once per run segment.
struct TraceSink {
    std::map<std::string, std::vector<std::vector<double>>> rows;

    void push(const std::string& file, std::vector<double> row) {
        rows[file].push_back(std::move(row));
    }

    void record_phase2(const ModelState& s) {
        const auto& h = s.hyper2;
        push("chi.txt", {h.chi});
        push("psi.txt", {h.psi});
        push("Triangle4.txt", {h.Triangle4});
        push("delta4.txt", {h.delta4});
        push("alpha.txt", {h.alpha[0], h.alpha[1], h.alpha[2]});
        push("delta.txt", {h.delta[0], h.delta[1], h.delta[2]});
        push("sigma0.txt", {h.sigma0});
        push("a_sd.txt", {h.a_sd});
        push("b_sd.txt", {h.b_sd});
        push("S_sd.txt", {h.S_sd});
        push("const_sd.txt", {h.const_sd});
        push("mean_eps_tau.txt", {h.mean_eps_tau});
        push("sd_eps_tau.txt", {h.sd_eps_tau});
        if (s.ar_phase2) push("rho_phase2.txt", {h.rho_phase2});
        for (int c = 0; c < s.n_countries(); ++c) {
            const auto& cs = s.countries[c];
            push(country_file_name("U", cs.code), {cs.p2.U});
            push(country_file_name("d", cs.code), {cs.p2.d});
            push(country_file_name("Triangle_c4", cs.code), {cs.p2.Triangle[3]});
            push(country_file_name("gamma", cs.code),
                 {cs.p2.gamma[0], cs.p2.gamma[1], cs.p2.gamma[2]});
            if (s.uncertainty) push(country_file_name("tfr", cs.code), s.tfr[c]);
        }
    }

    void record_phase3(const ModelState& s) {
        const auto& h = s.hyper3;
        push("mu.txt", {h.mu_bar});
        push("rho.txt", {h.rho_bar});
        push("sigma.mu.txt", {h.sigma_mu});
        push("sigma.rho.txt", {h.sigma_rho});
        push("sigma.eps.txt", {h.sigma_eps});
        for (const auto& cs : s.countries) {
            if (!(cs.in_phase3 && cs.markers.lambda <= s.grid.n_periods - 2)) continue;
            push(country_file_name("mu.c", cs.code), {cs.p3.mu});
            push(country_file_name("rho.c", cs.code), {cs.p3.rho});
        }
    }

    void flush(const fs::path& dir) const {
        for (const auto& [file, r] : rows) append_trace_rows(dir / file, r);
    }
};

inline void write_checkpoint(const fs::path& path, const ChainCheckpoint& cp) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path.string());
    out << checkpoint_to_json(cp).dump() << '\n';
}

inline ChainCheckpoint read_checkpoint(const fs::path& path, ModelState skeleton) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("missing checkpoint: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IntegrityError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j, std::move(skeleton));
}

/// Runs `n_iters` sweeps of one chain (Phase II, plus Phase III when
/// one_step), recording every thin-th state.
inline void advance_chain(ModelState& state, RngStream& rng, SweepScales& scales,
                          const ObsIndex& obs_idx, long start_iter, long n_iters, int thin,
                          long burnin, bool one_step, LatentCounters& total,
                          LatentCounters& postburn, TraceSink& sink2, TraceSink& sink3) {
    for (long i = start_iter + 1; i <= start_iter + n_iters; ++i) {
        const bool adapting = i <= burnin;
        LatentCounters step;
        sample_phase2_sweep(state, rng, scales, obs_idx, i, adapting, &step);
        if (one_step) sample_phase3_sweep(state, rng);
        total.proposals += step.proposals;
        total.accepts += step.accepts;
        if (i > burnin) {
            postburn.proposals += step.proposals;
            postburn.accepts += step.accepts;
        }
        if (i % thin == 0) {
            sink2.record_phase2(state);
            if (one_step) sink3.record_phase3(state);
        }
    }
}

/// Two-step Phase III chain segment (fixed latents, no Phase II updates).
inline void advance_phase3_chain(ModelState& state, RngStream& rng, long start_iter, long n_iters,
                                 int thin, TraceSink& sink) {
    for (long i = start_iter + 1; i <= start_iter + n_iters; ++i) {
        sample_phase3_sweep(state, rng);
        if (i % thin == 0) sink.record_phase3(state);
    }
}

inline void run_parallel(int n_jobs, bool parallel, const std::function<void(int)>& job) {
    if (!parallel || n_jobs <= 1) {
        for (int k = 0; k < n_jobs; ++k) job(k);
        return;
    }
    const int cap = std::max(1, std::min(engine_thread_cap(), n_jobs));
    std::vector<std::exception_ptr> errors(n_jobs);
    for (int base = 0; base < n_jobs; base += cap) {
        std::vector<std::thread> pool;
        const int hi = std::min(n_jobs, base + cap);
        for (int k = base; k < hi; ++k) {
            pool.emplace_back([&, k] {
                try {
                    job(k);
                } catch (...) {
                    errors[k] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline RawDataset raw_from_meta(const StoreMeta& meta, CountryId only_country = 0,
                                bool use_extra = true) {
    RawDataset ds;
    ds.covariate_names = meta.covariates;
    ds.cont_covariate_names = meta.cont_covariates;
    auto add = [&](const RawObsMeta& o) {
        if (only_country != 0 && o.country != only_country) return;
        RawObservation r;
        r.country = o.country;
        r.year = o.year;
        r.tfr = o.tfr;
        r.covariates = o.covariates;
        r.cont_covariates = o.cont_covariates;
        ds.observations.push_back(std::move(r));
    };
    std::set<CountryId> has_extra;
    if (use_extra) {
        for (const auto& [code, rows] : meta.raw_data_extra) {
            has_extra.insert(code);
            for (const auto& o : rows) add(o);
        }
    }
    for (const auto& o : meta.raw_data)
        if (!has_extra.count(o.country)) add(o);
    return ds;
}

}  // namespace detail_engine

/// Full estimation run: measurement fit (with uncertainty), phase detection,
/// chain initialization from the priors, and nr_chains x iters MCMC sweeps
/// persisted every thin-th iteration under the documented directory layout.
inline ChainStore run(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    if (cfg.nr_chains < 1) throw ConfigError("nr_chains must be at least 1");
    if (cfg.thin < 1) throw ConfigError("thin must be at least 1");
    if (cfg.iters < cfg.thin) throw ConfigError("iters must be at least thin");
    if (cfg.burnin < 0) cfg.burnin = cfg.iters / 5;
    if (cfg.burnin >= cfg.iters) throw ConfigError("burnin must be smaller than iters");
    if (cfg.ar_phase2 && !cfg.annual) cfg.ar_phase2 = false;  // ignored per contract
    if (cfg.sigma0_min < 0.0) cfg.sigma0_min = cfg.annual ? 0.04 : 0.01;
    if (!(cfg.sigma0_min > 0.0 && cfg.sigma0_min < kSigma0Upper))
        throw ConfigError("sigma0_min must lie in (0, 0.6)");
    if (cfg.uncertainty && cfg.raw_file.empty())
        throw ConfigError("uncertainty mode requires a raw TFR file");
    if (cfg.ref_file.empty()) throw ConfigError("a reference TFR file is required");

    const auto refs = load_reference(cfg.ref_file);
    const int present = cfg.present_year > 0 ? cfg.present_year : refs.front().grid.last_year();
    const int step = cfg.annual ? 1 : 5;
    if ((present - cfg.start_year) % step != 0)
        throw ConfigError("present year must be start year plus a multiple of the step");
    TimeGrid grid{cfg.start_year, step, (present - cfg.start_year) / step + 1};
    if (!grid.valid()) throw ConfigError("estimation span must cover at least 3 periods");

    StoreMeta meta;
    meta.annual = cfg.annual;
    meta.ar_phase2 = cfg.ar_phase2;
    meta.uncertainty = cfg.uncertainty;
    meta.one_step = cfg.uncertainty;
    meta.sigma0_min = cfg.sigma0_min;
    meta.grid = grid;
    meta.nr_chains = cfg.nr_chains;
    meta.iters = 0;
    meta.thin = cfg.thin;
    meta.burnin = cfg.burnin;
    meta.seed = cfg.seed;
    meta.parallel = cfg.parallel;
    meta.covariates = cfg.covariates;
    meta.cont_covariates = cfg.cont_covariates;
    meta.source_column = cfg.source_column;
    meta.unbiased_vr.assign(cfg.unbiased_vr.begin(), cfg.unbiased_vr.end());

    // Reference series per country on the estimation grid.
    std::vector<ReferenceSeries> series;
    for (const auto& ref : refs) {
        ReferenceSeries s;
        if (ref.grid.step == 5 && cfg.annual) {
            s = interpolate_reference(ref, grid);
        } else if (ref.grid.step == grid.step) {
            s = restrict_reference(ref, grid);
        } else {
            throw DataError("five-year estimation requires a five-year reference file");
        }
        series.push_back(std::move(s));
    }
    std::sort(series.begin(), series.end(),
              [](const auto& a, const auto& b) { return a.country < b.country; });

    for (const auto& s : series) {
        CountryMeta cm;
        cm.code = s.country;
        const PhaseMarkers markers = detect_phases(s.values, cfg.annual);
        cm.tau = markers.tau;
        cm.lambda = markers.lambda;
        double fmax = s.values[0];
        for (double v : s.values) fmax = std::max(fmax, v);
        cm.u_lower = std::min(5.5, fmax);
        cm.reference = s.values;
        meta.countries.push_back(std::move(cm));
    }

    // Measurement model (uncertainty mode): per-country bias/sd fit against
    // the reference, fixed for the whole MCMC run.
    if (cfg.uncertainty) {
        RawDataset raw = load_raw(cfg.raw_file, cfg.covariates, cfg.cont_covariates);
        for (std::size_t i = 0; i < series.size(); ++i) {
            const auto& s = series[i];
            RawDataset view;
            view.covariate_names = raw.covariate_names;
            view.cont_covariate_names = raw.cont_covariate_names;
            for (const auto& o : raw.observations) {
                if (o.country != s.country) continue;
                const int year = align_year(o.year);
                if (year < grid.start_year || year > grid.last_year()) continue;
                view.observations.push_back(o);
            }
            if (view.observations.empty()) continue;
            const auto fit = fit_bias_sd(view, s, s.country, cfg.unbiased_vr, cfg.source_column);
            meta.bias_sd_tables[s.country] = fit.table;
            for (std::size_t k = 0; k < view.observations.size(); ++k) {
                const auto& o = view.observations[k];
                RawObsMeta om;
                om.country = o.country;
                om.year = o.year;
                om.tfr = o.tfr;
                om.covariates = o.covariates;
                om.cont_covariates = o.cont_covariates;
                om.bias = fit.obs_bias[k];
                om.sd = fit.obs_sd[k];
                meta.raw_data.push_back(std::move(om));
            }
        }
    }

    // Fresh output tree. Mode flags of an existing simulation are immutable:
    // re-running with the same modes overwrites, switching them is an error.
    if (fs::exists(cfg.output_dir / ChainStore::kMetaFile)) {
        const StoreMeta old = ChainStore::open(cfg.output_dir).meta();
        if (old.annual != meta.annual || old.ar_phase2 != meta.ar_phase2 ||
            old.uncertainty != meta.uncertainty)
            throw ConfigError("simulation directory " + cfg.output_dir.string() +
                              " was created with different annual/ar_phase2/uncertainty flags; "
                              "remove it to change modes");
        fs::remove(cfg.output_dir / ChainStore::kMetaFile);
        for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("mc", 0) == 0 || name == "phaseIII" || name == "predictions" ||
                name == "diagnostics" || name.rfind("thinned_mcmc_", 0) == 0)
                fs::remove_all(entry.path());
        }
    }
    ChainStore store = ChainStore::create(cfg.output_dir, meta);

    meta.latent_acceptance.assign(cfg.nr_chains, 0.0);
    detail_engine::run_parallel(cfg.nr_chains, cfg.parallel, [&](int k) {
        const int chain = k + 1;
        ModelState state = detail_engine::build_state(meta);
        RngStream rng(cfg.seed, static_cast<std::uint64_t>(chain));
        detail_engine::jitter_state(state, rng);
        SweepScales scales;
        scales.init(state);
        const ObsIndex obs_idx = ObsIndex::build(state);

        detail_engine::TraceSink sink2, sink3;
        LatentCounters total, postburn;
        detail_engine::advance_chain(state, rng, scales, obs_idx, 0, cfg.iters, cfg.thin,
                                     cfg.burnin, meta.one_step, total, postburn, sink2, sink3);
        sink2.flush(store.chain_dir(chain));
        sink3.flush(store.phase3_chain_dir(chain));

        ChainCheckpoint cp;
        cp.iterations_done = cfg.iters;
        cp.rng_state = rng.save();
        cp.state = state;
        cp.scales = scales.serialize();
        cp.latent_total = total;
        cp.latent_postburn = postburn;
        detail_engine::write_checkpoint(store.chain_dir(chain) / ChainStore::kCheckpointFile, cp);
        meta.latent_acceptance[k] = postburn.rate();
    });

    // Two-step estimation: Phase III runs as its own chain set against the
    // fixed reference series.
    if (!meta.one_step) {
        detail_engine::run_parallel(cfg.nr_chains, cfg.parallel, [&](int k) {
            const int chain = k + 1;
            ModelState state = detail_engine::build_state(meta);
            RngStream rng(cfg.seed, detail_engine::kPhase3StreamOffset + chain);
            detail_engine::TraceSink sink;
            detail_engine::advance_phase3_chain(state, rng, 0, cfg.iters, cfg.thin, sink);
            sink.flush(store.phase3_chain_dir(chain));
            ChainCheckpoint cp;
            cp.iterations_done = cfg.iters;
            cp.rng_state = rng.save();
            cp.state = state;
            detail_engine::write_checkpoint(
                store.phase3_chain_dir(chain) / ChainStore::kCheckpointFile, cp);
        });
    }

    {
        std::ofstream out(store.phase3_dir() / ChainStore::kMetaFile);
        out << json{{"nr_chains", cfg.nr_chains},
                    {"iters", cfg.iters},
                    {"thin", cfg.thin},
                    {"one_step", meta.one_step}}
                   .dump(1)
            << '\n';
    }

    meta.iters = cfg.iters;
    store.meta() = meta;
    store.save_meta();
    return store;
}

/// Extends every chain of an existing simulation by extra_iters iterations,
/// resuming from the persisted state and RNG checkpoints so that the result
/// is bitwise identical to an uninterrupted run.
inline ChainStore continue_run(const fs::path& dir, long extra_iters) {
    ChainStore store = ChainStore::open(dir);
    StoreMeta& meta = store.meta();
    if (extra_iters < 0) throw ConfigError("extra iterations must be nonnegative");
    if (extra_iters == 0) return store;
    store.verify_integrity();

    if (meta.latent_acceptance.empty()) meta.latent_acceptance.assign(meta.nr_chains, 0.0);
    detail_engine::run_parallel(meta.nr_chains, meta.parallel, [&](int k) {
        const int chain = k + 1;
        ModelState skeleton = detail_engine::build_state(meta);
        ChainCheckpoint cp = detail_engine::read_checkpoint(
            store.chain_dir(chain) / ChainStore::kCheckpointFile, std::move(skeleton));
        if (cp.iterations_done != meta.iters)
            throw IntegrityError("checkpoint of chain " + std::to_string(chain) +
                                 " does not match the meta iteration count");
        ModelState state = std::move(cp.state);
        RngStream rng;
        rng.restore(cp.rng_state);
        SweepScales scales;
        scales.init(state);
        scales.deserialize(cp.scales);
        const ObsIndex obs_idx = ObsIndex::build(state);

        detail_engine::TraceSink sink2, sink3;
        detail_engine::advance_chain(state, rng, scales, obs_idx, meta.iters, extra_iters,
                                     meta.thin, meta.burnin, meta.one_step, cp.latent_total,
                                     cp.latent_postburn, sink2, sink3);
        sink2.flush(store.chain_dir(chain));
        sink3.flush(store.phase3_chain_dir(chain));

        cp.iterations_done = meta.iters + extra_iters;
        cp.rng_state = rng.save();
        cp.state = std::move(state);
        cp.scales = scales.serialize();
        detail_engine::write_checkpoint(store.chain_dir(chain) / ChainStore::kCheckpointFile, cp);
        meta.latent_acceptance[k] = cp.latent_postburn.rate();
    });

    if (!meta.one_step) {
        detail_engine::run_parallel(meta.nr_chains, meta.parallel, [&](int k) {
            const int chain = k + 1;
            ModelState skeleton = detail_engine::build_state(meta);
            ChainCheckpoint cp = detail_engine::read_checkpoint(
                store.phase3_chain_dir(chain) / ChainStore::kCheckpointFile, std::move(skeleton));
            ModelState state = std::move(cp.state);
            RngStream rng;
            rng.restore(cp.rng_state);
            detail_engine::TraceSink sink;
            detail_engine::advance_phase3_chain(state, rng, meta.iters, extra_iters, meta.thin,
                                                sink);
            sink.flush(store.phase3_chain_dir(chain));
            cp.iterations_done = meta.iters + extra_iters;
            cp.rng_state = rng.save();
            cp.state = std::move(state);
            detail_engine::write_checkpoint(
                store.phase3_chain_dir(chain) / ChainStore::kCheckpointFile, cp);
        });
    }

    meta.iters += extra_iters;
    store.save_meta();
    return store;
}

namespace detail_engine {

/// Loads the per-row hyperparameter values of one chain.
struct HyperTrace {
    std::vector<std::vector<double>> rows2;  // phase2 hypers, flattened
    std::vector<std::vector<double>> rows3;  // phase3 hypers

    static HyperTrace load(const ChainStore& store, int chain) {
        HyperTrace ht;
        const auto dir2 = store.chain_dir(chain);
        std::vector<std::vector<std::vector<double>>> cols2;
        for (const auto& name : phase2_hyper_names(store.meta().ar_phase2))
            cols2.push_back(read_trace(dir2 / (name + ".txt")));
        const std::size_t rows = cols2.empty() ? 0 : cols2[0].size();
        ht.rows2.resize(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (const auto& col : cols2)
                for (double v : col[r]) ht.rows2[r].push_back(v);

        const auto dir3 = store.phase3_chain_dir(chain);
        std::vector<std::vector<std::vector<double>>> cols3;
        for (const auto& name : phase3_hyper_names())
            cols3.push_back(read_trace(dir3 / (name + ".txt")));
        const std::size_t rows3 = cols3.empty() ? 0 : cols3[0].size();
        ht.rows3.resize(rows3);
        for (std::size_t r = 0; r < rows3; ++r)
            for (const auto& col : cols3)
                for (double v : col[r]) ht.rows3[r].push_back(v);
        return ht;
    }

    void apply2(ModelState& s, std::size_t r) const {
        const auto& v = rows2.at(r);
        std::size_t i = 0;
        s.hyper2.chi = v[i++];
        s.hyper2.psi = v[i++];
        s.hyper2.Triangle4 = v[i++];
        s.hyper2.delta4 = v[i++];
        for (int j = 0; j < 3; ++j) s.hyper2.alpha[j] = v[i++];
        for (int j = 0; j < 3; ++j) s.hyper2.delta[j] = v[i++];
        s.hyper2.sigma0 = v[i++];
        s.hyper2.a_sd = v[i++];
        s.hyper2.b_sd = v[i++];
        s.hyper2.S_sd = v[i++];
        s.hyper2.const_sd = v[i++];
        s.hyper2.mean_eps_tau = v[i++];
        s.hyper2.sd_eps_tau = v[i++];
        if (s.ar_phase2) s.hyper2.rho_phase2 = v[i++];
    }

    void apply3(ModelState& s, std::size_t r) const {
        if (r >= rows3.size()) return;
        const auto& v = rows3.at(r);
        s.hyper3.mu_bar = v[0];
        s.hyper3.rho_bar = v[1];
        s.hyper3.sigma_mu = v[2];
        s.hyper3.sigma_rho = v[3];
        s.hyper3.sigma_eps = v[4];
    }
};

}  // namespace detail_engine

/// Re-estimates the country-specific parameters (and latent TFR) of selected
/// countries against the frozen global parameter traces, optionally with
/// replacement raw data. Only the listed countries' trace files are
/// rewritten; hyperparameter files are untouched.
inline ChainStore run_extra(const fs::path& dir, const ExtraConfig& cfg) {
    ChainStore store = ChainStore::open(dir);
    StoreMeta& meta = store.meta();
    if (cfg.countries.empty()) return store;
    store.verify_integrity();

    std::vector<int> targets;
    ModelState probe = detail_engine::build_state(meta);
    for (CountryId code : cfg.countries) {
        int found = -1;
        for (int c = 0; c < probe.n_countries(); ++c)
            if (probe.countries[c].code == code) found = c;
        if (found < 0)
            throw ConfigError("country " + std::to_string(code) + " is not in the simulation");
        targets.push_back(found);
    }

    // Re-fit the measurement model for the selected countries.
    if (!cfg.covariates.empty() && cfg.raw_file.empty())
        throw ConfigError("changing covariates in run_extra requires a raw file");
    const std::vector<std::string> covs = cfg.covariates.empty() ? meta.covariates : cfg.covariates;
    const std::vector<std::string> ccovs =
        cfg.covariates.empty() ? meta.cont_covariates : cfg.cont_covariates;
    if (meta.uncertainty) {
        RawDataset raw;
        if (!cfg.raw_file.empty()) {
            raw = load_raw(cfg.raw_file, covs, ccovs);
        } else {
            raw = detail_engine::raw_from_meta(meta, 0, false);
        }
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const CountryId code = cfg.countries[i];
            const auto* cm = meta.find_country(code);
            ReferenceSeries ref;
            ref.country = code;
            ref.grid = meta.grid;
            ref.values = cm->reference;
            RawDataset view;
            view.covariate_names = raw.covariate_names;
            view.cont_covariate_names = raw.cont_covariate_names;
            for (const auto& o : raw.observations) {
                if (o.country != code) continue;
                const int year = align_year(o.year);
                if (year < meta.grid.start_year || year > meta.grid.last_year()) continue;
                view.observations.push_back(o);
            }
            const auto fit = fit_bias_sd(view, ref, code, cfg.unbiased_vr, meta.source_column);
            meta.bias_sd_tables[code] = fit.table;
            std::vector<RawObsMeta> rows;
            for (std::size_t k = 0; k < view.observations.size(); ++k) {
                const auto& o = view.observations[k];
                RawObsMeta om;
                om.country = o.country;
                om.year = o.year;
                om.tfr = o.tfr;
                om.covariates = o.covariates;
                om.cont_covariates = o.cont_covariates;
                om.bias = fit.obs_bias[k];
                om.sd = fit.obs_sd[k];
                rows.push_back(std::move(om));
            }
            meta.raw_data_extra[code] = std::move(rows);
        }
    }

    const long stored = meta.stored_rows();
    const long n_inner = std::max<long>(1, cfg.iters > 0 ? cfg.iters / std::max<long>(stored, 1) : 1);
    const long warmup = cfg.burnin > 0 ? cfg.burnin : 0;

    for (int k = 0; k < meta.nr_chains; ++k) {
        const int chain = k + 1;
        const auto ht = detail_engine::HyperTrace::load(store, chain);

        ModelState skeleton = detail_engine::build_state(meta);
        ChainCheckpoint cp = detail_engine::read_checkpoint(
            store.chain_dir(chain) / ChainStore::kCheckpointFile, std::move(skeleton));
        ModelState state = std::move(cp.state);
        const Phase2Hyper hyper2_orig = state.hyper2;
        const Phase3Hyper hyper3_orig = state.hyper3;
        // Latents and observations for the re-estimated countries come from
        // the (possibly replaced) raw data; start latents at the reference.
        ModelState fresh = detail_engine::build_state(meta);
        for (int c : targets) {
            state.observations[c] = fresh.observations[c];
            state.tfr[c] = fresh.tfr[c];
            state.countries[c].p2 = fresh.countries[c].p2;
            state.countries[c].p3 = fresh.countries[c].p3;
        }
        const ObsIndex obs_idx = ObsIndex::build(state);

        RngStream rng(meta.seed, detail_engine::kExtraStreamOffset + chain);
        SweepScales scales;
        scales.init(state);

        detail_engine::TraceSink sink;
        long iter_counter = 0;
        auto country_block = [&](bool adapting) {
            ++iter_counter;
            for (int c : targets) {
                phase2_country_mh(state, c, rng, scales.country[c], iter_counter, adapting);
                if (state.uncertainty)
                    phase2_latent_pass(state, c, rng, scales.latent[c], obs_idx, iter_counter,
                                       adapting, nullptr);
                if (state.countries[c].in_phase3 && phase3_transition_count(state, c) > 0)
                    phase3_country_gibbs(state, c, rng);
            }
        };

        if (stored > 0) ht.apply2(state, 0);
        if (stored > 0) ht.apply3(state, 0);
        for (long w = 0; w < warmup; ++w) country_block(true);
        for (long r = 0; r < stored; ++r) {
            ht.apply2(state, r);
            ht.apply3(state, r);
            for (long j = 0; j < n_inner; ++j) country_block(false);
            for (int c : targets) {
                const auto& cs = state.countries[c];
                sink.push(country_file_name("U", cs.code), {cs.p2.U});
                sink.push(country_file_name("d", cs.code), {cs.p2.d});
                sink.push(country_file_name("Triangle_c4", cs.code), {cs.p2.Triangle[3]});
                sink.push(country_file_name("gamma", cs.code),
                          {cs.p2.gamma[0], cs.p2.gamma[1], cs.p2.gamma[2]});
                if (state.uncertainty) sink.push(country_file_name("tfr", cs.code), state.tfr[c]);
                if (cs.in_phase3 && cs.markers.lambda <= state.grid.n_periods - 2) {
                    sink.push(country_file_name("mu.c", cs.code), {cs.p3.mu});
                    sink.push(country_file_name("rho.c", cs.code), {cs.p3.rho});
                }
            }
        }

        // Overwrite the affected country files; leave everything else alone.
        for (const auto& [file, rows] : sink.rows) {
            const bool p3 = file.rfind("mu.c_", 0) == 0 || file.rfind("rho.c_", 0) == 0;
            const fs::path path = (p3 ? store.phase3_chain_dir(chain) : store.chain_dir(chain)) / file;
            fs::remove(path);
            append_trace_rows(path, rows);
        }

        // Keep the chain checkpoint coherent with the rewritten traces: only
        // the targeted countries change; hyperparameters revert to the main
        // chain's final values.
        state.hyper2 = hyper2_orig;
        state.hyper3 = hyper3_orig;
        cp.state = std::move(state);
        detail_engine::write_checkpoint(store.chain_dir(chain) / ChainStore::kCheckpointFile, cp);
    }

    for (CountryId code : cfg.countries) {
        ExtraMeta em;
        em.iters = cfg.iters > 0 ? cfg.iters : stored;
        em.burnin = cfg.burnin;
        em.covariates = covs;
        em.cont_covariates = ccovs;
        em.raw_file = cfg.raw_file;
        meta.extra[code] = std::move(em);
    }
    store.save_meta();
    return store;
}

}  // namespace tfr
