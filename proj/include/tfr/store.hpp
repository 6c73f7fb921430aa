#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "tfr/sweep.hpp"
#include "tfr/types.hpp"

namespace tfr {

namespace fs = std::filesystem;
using nlohmann::json;

/// Trace values are written with 15 significant digits, space separated, one
/// stored iteration per row.
inline std::string format_trace_value(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.15g", v);
    return buf;
}

inline void append_trace_rows(const fs::path& path, const std::vector<std::vector<double>>& rows) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw DataError("cannot open trace file for writing: " + path.string());
    for (const auto& row : rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ' ';
            out << format_trace_value(row[i]);
        }
        out << '\n';
    }
}

inline std::vector<std::vector<double>> read_trace(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("missing trace file: " + path.string());
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        const char* p = line.c_str();
        char* end = nullptr;
        for (;;) {
            const double v = std::strtod(p, &end);
            if (end == p) break;
            row.push_back(v);
            p = end;
        }
        if (!row.empty()) rows.push_back(std::move(row));
    }
    return rows;
}

inline std::vector<double> read_trace_column(const fs::path& path, int column) {
    const auto rows = read_trace(path);
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        if (column >= static_cast<int>(r.size()))
            throw IntegrityError("trace file " + path.string() + " lacks column " +
                                 std::to_string(column));
        out.push_back(r[column]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameter naming (mirrors the persisted file layout).

inline const std::vector<std::string>& phase2_hyper_names(bool ar_phase2) {
    static const std::vector<std::string> base = {
        "chi",      "psi",  "Triangle4", "delta4",   "alpha",        "delta",     "sigma0",
        "a_sd",     "b_sd", "S_sd",      "const_sd", "mean_eps_tau", "sd_eps_tau"};
    static const std::vector<std::string> with_ar = [] {
        auto v = base;
        v.push_back("rho_phase2");
        return v;
    }();
    return ar_phase2 ? with_ar : base;
}

inline const std::vector<std::string>& phase3_hyper_names() {
    static const std::vector<std::string> names = {"mu", "rho", "sigma.mu", "sigma.rho",
                                                   "sigma.eps"};
    return names;
}

inline const std::vector<std::string>& phase2_country_param_names() {
    static const std::vector<std::string> names = {"U", "d", "Triangle_c4", "gamma"};
    return names;
}

inline const std::vector<std::string>& phase3_country_param_names() {
    static const std::vector<std::string> names = {"mu.c", "rho.c"};
    return names;
}

inline std::string country_file_name(const std::string& param, CountryId code) {
    return param + "_country" + std::to_string(code) + ".txt";
}

// ---------------------------------------------------------------------------
// Meta record.

struct CountryMeta {
    CountryId code = 0;
    int tau = PhaseMarkers::kBeforeStart;
    int lambda = 0;
    double u_lower = 5.5;
    std::vector<double> reference;
};

struct RawObsMeta {
    CountryId country = 0;
    double year = 0.0;
    double tfr = 0.0;
    std::vector<std::string> covariates;
    std::vector<double> cont_covariates;
    double bias = 0.0;
    double sd = 0.1;
};

struct ExtraMeta {
    long iters = 0;
    long burnin = 0;
    std::vector<std::string> covariates;
    std::vector<std::string> cont_covariates;
    std::string raw_file;
};

struct StoreMeta {
    int version = 1;
    bool annual = false;
    bool ar_phase2 = false;
    bool uncertainty = false;
    bool one_step = false;
    double sigma0_min = 0.01;
    TimeGrid grid;
    int nr_chains = 0;
    long iters = 0;       // iterations run so far, per chain
    int thin = 1;
    long burnin = 0;      // burn-in used for proposal adaptation
    std::uint64_t seed = 0;
    bool parallel = false;
    std::vector<std::string> covariates;
    std::vector<std::string> cont_covariates;
    std::string source_column = "source";
    std::vector<CountryId> unbiased_vr;
    std::vector<CountryMeta> countries;
    std::vector<RawObsMeta> raw_data;
    std::map<CountryId, std::vector<RawObsMeta>> raw_data_extra;
    std::map<CountryId, ExtraMeta> extra;
    std::map<CountryId, std::vector<MeasurementRow>> bias_sd_tables;
    std::vector<double> latent_acceptance;  // per chain, post-burn-in

    int stored_rows() const { return static_cast<int>(iters / thin); }

    const CountryMeta* find_country(CountryId code) const {
        for (const auto& c : countries)
            if (c.code == code) return &c;
        return nullptr;
    }
};

namespace detail_json {

inline json to_json(const MeasurementRow& r) {
    return json{{"combination", r.combination}, {"bias", r.bias},          {"sd", r.sd},
                {"n_obs", r.n_obs},             {"vr_override", r.vr_override}};
}
inline MeasurementRow measurement_row_from(const json& j) {
    MeasurementRow r;
    r.combination = j.at("combination").get<std::vector<std::string>>();
    r.bias = j.at("bias").get<double>();
    r.sd = j.at("sd").get<double>();
    r.n_obs = j.at("n_obs").get<int>();
    r.vr_override = j.at("vr_override").get<bool>();
    return r;
}

inline json to_json(const RawObsMeta& o) {
    return json{{"country", o.country}, {"year", o.year},
                {"tfr", o.tfr},         {"covariates", o.covariates},
                {"cont", o.cont_covariates}, {"bias", o.bias},
                {"sd", o.sd}};
}
inline RawObsMeta raw_obs_from(const json& j) {
    RawObsMeta o;
    o.country = j.at("country").get<CountryId>();
    o.year = j.at("year").get<double>();
    o.tfr = j.at("tfr").get<double>();
    o.covariates = j.at("covariates").get<std::vector<std::string>>();
    o.cont_covariates = j.at("cont").get<std::vector<double>>();
    o.bias = j.at("bias").get<double>();
    o.sd = j.at("sd").get<double>();
    return o;
}

}  // namespace detail_json

inline json store_meta_to_json(const StoreMeta& m) {
    json j;
    j["version"] = m.version;
    j["annual"] = m.annual;
    j["ar_phase2"] = m.ar_phase2;
    j["uncertainty"] = m.uncertainty;
    j["one_step"] = m.one_step;
    j["sigma0_min"] = m.sigma0_min;
    j["grid"] = {{"start_year", m.grid.start_year}, {"step", m.grid.step},
                 {"n_periods", m.grid.n_periods}};
    j["nr_chains"] = m.nr_chains;
    j["iters"] = m.iters;
    j["thin"] = m.thin;
    j["burnin"] = m.burnin;
    j["seed"] = m.seed;
    j["parallel"] = m.parallel;
    j["covariates"] = m.covariates;
    j["cont_covariates"] = m.cont_covariates;
    j["source_column"] = m.source_column;
    j["unbiased_vr"] = m.unbiased_vr;
    j["latent_acceptance"] = m.latent_acceptance;
    j["countries"] = json::array();
    for (const auto& c : m.countries) {
        j["countries"].push_back(json{{"code", c.code},
                                      {"tau", c.tau},
                                      {"lambda", c.lambda},
                                      {"u_lower", c.u_lower},
                                      {"reference", c.reference}});
    }
    j["raw_data"] = json::array();
    for (const auto& o : m.raw_data) j["raw_data"].push_back(detail_json::to_json(o));
    j["raw_data_extra"] = json::object();
    for (const auto& [code, v] : m.raw_data_extra) {
        json arr = json::array();
        for (const auto& o : v) arr.push_back(detail_json::to_json(o));
        j["raw_data_extra"][std::to_string(code)] = std::move(arr);
    }
    j["extra"] = json::object();
    for (const auto& [code, e] : m.extra) {
        j["extra"][std::to_string(code)] = json{{"iters", e.iters},
                                                {"burnin", e.burnin},
                                                {"covariates", e.covariates},
                                                {"cont_covariates", e.cont_covariates},
                                                {"raw_file", e.raw_file}};
    }
    j["bias_sd_tables"] = json::object();
    for (const auto& [code, rows] : m.bias_sd_tables) {
        json arr = json::array();
        for (const auto& r : rows) arr.push_back(detail_json::to_json(r));
        j["bias_sd_tables"][std::to_string(code)] = std::move(arr);
    }
    return j;
}

inline StoreMeta store_meta_from_json(const json& j) {
    StoreMeta m;
    m.version = j.at("version").get<int>();
    m.annual = j.at("annual").get<bool>();
    m.ar_phase2 = j.at("ar_phase2").get<bool>();
    m.uncertainty = j.at("uncertainty").get<bool>();
    m.one_step = j.at("one_step").get<bool>();
    m.sigma0_min = j.at("sigma0_min").get<double>();
    m.grid.start_year = j.at("grid").at("start_year").get<int>();
    m.grid.step = j.at("grid").at("step").get<int>();
    m.grid.n_periods = j.at("grid").at("n_periods").get<int>();
    m.nr_chains = j.at("nr_chains").get<int>();
    m.iters = j.at("iters").get<long>();
    m.thin = j.at("thin").get<int>();
    m.burnin = j.at("burnin").get<long>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.parallel = j.at("parallel").get<bool>();
    m.covariates = j.at("covariates").get<std::vector<std::string>>();
    m.cont_covariates = j.at("cont_covariates").get<std::vector<std::string>>();
    m.source_column = j.at("source_column").get<std::string>();
    m.unbiased_vr = j.at("unbiased_vr").get<std::vector<CountryId>>();
    m.latent_acceptance = j.at("latent_acceptance").get<std::vector<double>>();
    for (const auto& cj : j.at("countries")) {
        CountryMeta c;
        c.code = cj.at("code").get<CountryId>();
        c.tau = cj.at("tau").get<int>();
        c.lambda = cj.at("lambda").get<int>();
        c.u_lower = cj.at("u_lower").get<double>();
        c.reference = cj.at("reference").get<std::vector<double>>();
        m.countries.push_back(std::move(c));
    }
    for (const auto& oj : j.at("raw_data")) m.raw_data.push_back(detail_json::raw_obs_from(oj));
    for (const auto& [key, arr] : j.at("raw_data_extra").items()) {
        std::vector<RawObsMeta> v;
        for (const auto& oj : arr) v.push_back(detail_json::raw_obs_from(oj));
        m.raw_data_extra[std::stoi(key)] = std::move(v);
    }
    for (const auto& [key, ej] : j.at("extra").items()) {
        ExtraMeta e;
        e.iters = ej.at("iters").get<long>();
        e.burnin = ej.at("burnin").get<long>();
        e.covariates = ej.at("covariates").get<std::vector<std::string>>();
        e.cont_covariates = ej.at("cont_covariates").get<std::vector<std::string>>();
        e.raw_file = ej.at("raw_file").get<std::string>();
        m.extra[std::stoi(key)] = std::move(e);
    }
    for (const auto& [key, arr] : j.at("bias_sd_tables").items()) {
        std::vector<MeasurementRow> rows;
        for (const auto& rj : arr) rows.push_back(detail_json::measurement_row_from(rj));
        m.bias_sd_tables[std::stoi(key)] = std::move(rows);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Chain checkpoints (full state + rng + proposal scales), enabling bitwise
// identical continuation.

struct ChainCheckpoint {
    long iterations_done = 0;
    std::string rng_state;
    ModelState state;
    std::vector<double> scales;
    LatentCounters latent_total;      // since chain start
    LatentCounters latent_postburn;   // since burn-in end
};

inline json checkpoint_to_json(const ChainCheckpoint& cp) {
    json j;
    j["iterations_done"] = cp.iterations_done;
    j["rng_state"] = cp.rng_state;
    j["scales"] = cp.scales;
    j["latent_total"] = {{"proposals", cp.latent_total.proposals},
                         {"accepts", cp.latent_total.accepts}};
    j["latent_postburn"] = {{"proposals", cp.latent_postburn.proposals},
                            {"accepts", cp.latent_postburn.accepts}};
    const auto& s = cp.state;
    json st;
    st["hyper2"] = {{"chi", s.hyper2.chi},
                    {"psi", s.hyper2.psi},
                    {"Triangle4", s.hyper2.Triangle4},
                    {"delta4", s.hyper2.delta4},
                    {"alpha", s.hyper2.alpha},
                    {"delta", s.hyper2.delta},
                    {"sigma0", s.hyper2.sigma0},
                    {"a_sd", s.hyper2.a_sd},
                    {"b_sd", s.hyper2.b_sd},
                    {"S_sd", s.hyper2.S_sd},
                    {"const_sd", s.hyper2.const_sd},
                    {"mean_eps_tau", s.hyper2.mean_eps_tau},
                    {"sd_eps_tau", s.hyper2.sd_eps_tau},
                    {"rho_phase2", s.hyper2.rho_phase2}};
    st["hyper3"] = {{"mu_bar", s.hyper3.mu_bar},
                    {"sigma_mu", s.hyper3.sigma_mu},
                    {"rho_bar", s.hyper3.rho_bar},
                    {"sigma_rho", s.hyper3.sigma_rho},
                    {"sigma_eps", s.hyper3.sigma_eps}};
    st["countries"] = json::array();
    for (const auto& cs : s.countries) {
        st["countries"].push_back(json{{"code", cs.code},
                                       {"gamma", cs.p2.gamma},
                                       {"Triangle4_star", cs.p2.Triangle4_star},
                                       {"d_star", cs.p2.d_star},
                                       {"U", cs.p2.U},
                                       {"mu", cs.p3.mu},
                                       {"rho", cs.p3.rho}});
    }
    st["tfr"] = s.tfr;
    j["state"] = std::move(st);
    return j;
}

/// Restores the dynamic parts of a checkpoint into a state skeleton prepared
/// from the meta record (markers, observations, flags stay as built).
inline ChainCheckpoint checkpoint_from_json(const json& j, ModelState skeleton) {
    ChainCheckpoint cp;
    cp.iterations_done = j.at("iterations_done").get<long>();
    cp.rng_state = j.at("rng_state").get<std::string>();
    cp.scales = j.at("scales").get<std::vector<double>>();
    cp.latent_total.proposals = j.at("latent_total").at("proposals").get<long>();
    cp.latent_total.accepts = j.at("latent_total").at("accepts").get<long>();
    cp.latent_postburn.proposals = j.at("latent_postburn").at("proposals").get<long>();
    cp.latent_postburn.accepts = j.at("latent_postburn").at("accepts").get<long>();

    const auto& st = j.at("state");
    auto& s = skeleton;
    const auto& h2 = st.at("hyper2");
    s.hyper2.chi = h2.at("chi").get<double>();
    s.hyper2.psi = h2.at("psi").get<double>();
    s.hyper2.Triangle4 = h2.at("Triangle4").get<double>();
    s.hyper2.delta4 = h2.at("delta4").get<double>();
    s.hyper2.alpha = h2.at("alpha").get<std::array<double, 3>>();
    s.hyper2.delta = h2.at("delta").get<std::array<double, 3>>();
    s.hyper2.sigma0 = h2.at("sigma0").get<double>();
    s.hyper2.a_sd = h2.at("a_sd").get<double>();
    s.hyper2.b_sd = h2.at("b_sd").get<double>();
    s.hyper2.S_sd = h2.at("S_sd").get<double>();
    s.hyper2.const_sd = h2.at("const_sd").get<double>();
    s.hyper2.mean_eps_tau = h2.at("mean_eps_tau").get<double>();
    s.hyper2.sd_eps_tau = h2.at("sd_eps_tau").get<double>();
    s.hyper2.rho_phase2 = h2.at("rho_phase2").get<double>();
    const auto& h3 = st.at("hyper3");
    s.hyper3.mu_bar = h3.at("mu_bar").get<double>();
    s.hyper3.sigma_mu = h3.at("sigma_mu").get<double>();
    s.hyper3.rho_bar = h3.at("rho_bar").get<double>();
    s.hyper3.sigma_rho = h3.at("sigma_rho").get<double>();
    s.hyper3.sigma_eps = h3.at("sigma_eps").get<double>();
    const auto& cj = st.at("countries");
    if (cj.size() != s.countries.size())
        throw IntegrityError("checkpoint country count does not match meta record");
    for (std::size_t c = 0; c < s.countries.size(); ++c) {
        auto& cs = s.countries[c];
        if (cj[c].at("code").get<CountryId>() != cs.code)
            throw IntegrityError("checkpoint country order does not match meta record");
        cs.p2.gamma = cj[c].at("gamma").get<std::array<double, 3>>();
        cs.p2.Triangle4_star = cj[c].at("Triangle4_star").get<double>();
        cs.p2.d_star = cj[c].at("d_star").get<double>();
        cs.p2.U = cj[c].at("U").get<double>();
        cs.p2.sync(s.d_bounds());
        cs.p3.mu = cj[c].at("mu").get<double>();
        cs.p3.rho = cj[c].at("rho").get<double>();
    }
    s.tfr = st.at("tfr").get<std::vector<std::vector<double>>>();
    cp.state = std::move(s);
    return cp;
}

// ---------------------------------------------------------------------------
// Store handle.

class ChainStore {
  public:
    static constexpr const char* kMetaFile = "meta.json";
    static constexpr const char* kCheckpointFile = "state.json";

    ChainStore() = default;
    explicit ChainStore(fs::path dir) : dir_(std::move(dir)) {}

    /// Creates the directory skeleton and writes the meta record.
    static ChainStore create(const fs::path& dir, const StoreMeta& meta) {
        ChainStore store(dir);
        fs::create_directories(dir);
        for (int k = 1; k <= meta.nr_chains; ++k) {
            fs::create_directories(store.chain_dir(k));
            fs::create_directories(store.phase3_chain_dir(k));
        }
        fs::create_directories(dir / "predictions");
        fs::create_directories(dir / "diagnostics");
        store.meta_ = meta;
        store.save_meta();
        return store;
    }

    static ChainStore open(const fs::path& dir) {
        ChainStore store(dir);
        const fs::path meta_path = dir / kMetaFile;
        std::ifstream in(meta_path);
        if (!in) throw IntegrityError("not a simulation directory (missing " +
                                      meta_path.string() + ")");
        json j;
        try {
            in >> j;
            store.meta_ = store_meta_from_json(j);
        } catch (const json::exception& e) {
            throw IntegrityError("corrupt meta record " + meta_path.string() + ": " + e.what());
        }
        return store;
    }

    const fs::path& dir() const { return dir_; }
    StoreMeta& meta() { return meta_; }
    const StoreMeta& meta() const { return meta_; }

    void save_meta() const {
        std::ofstream out(dir_ / kMetaFile);
        if (!out) throw DataError("cannot write meta record in " + dir_.string());
        out << store_meta_to_json(meta_).dump(1) << '\n';
    }

    fs::path chain_dir(int chain) const { return dir_ / ("mc" + std::to_string(chain)); }
    fs::path phase3_dir() const { return dir_ / "phaseIII"; }
    fs::path phase3_chain_dir(int chain) const {
        return phase3_dir() / ("mc" + std::to_string(chain));
    }
    fs::path predictions_dir() const { return dir_ / "predictions"; }
    fs::path diagnostics_dir() const { return dir_ / "diagnostics"; }
    fs::path thinned_dir(int thin, long burnin) const {
        return dir_ / ("thinned_mcmc_" + std::to_string(thin) + "_" + std::to_string(burnin));
    }

    /// All trace files expected in a main chain directory.
    std::vector<std::string> phase2_files() const {
        std::vector<std::string> files;
        for (const auto& n : phase2_hyper_names(meta_.ar_phase2)) files.push_back(n + ".txt");
        for (const auto& c : meta_.countries) {
            for (const auto& p : phase2_country_param_names())
                files.push_back(country_file_name(p, c.code));
            if (meta_.uncertainty) files.push_back(country_file_name("tfr", c.code));
        }
        return files;
    }

    std::vector<std::string> phase3_files() const {
        std::vector<std::string> files;
        for (const auto& n : phase3_hyper_names()) files.push_back(n + ".txt");
        for (const auto& c : meta_.countries) {
            if (!phase3_participant(c)) continue;
            for (const auto& p : phase3_country_param_names())
                files.push_back(country_file_name(p, c.code));
        }
        return files;
    }

    bool phase3_participant(const CountryMeta& c) const {
        return c.lambda <= meta_.grid.n_periods - 2;
    }

    /// Verifies existence and row counts of every expected trace file.
    void verify_integrity() const {
        const int expected = meta_.stored_rows();
        auto check = [&](const fs::path& p) {
            std::ifstream in(p);
            if (!in) throw IntegrityError("missing trace file: " + p.string());
            int rows = 0;
            std::string line;
            while (std::getline(in, line))
                if (!line.empty()) ++rows;
            if (rows != expected)
                throw IntegrityError("trace file " + p.string() + " has " + std::to_string(rows) +
                                     " rows, expected " + std::to_string(expected));
        };
        for (int k = 1; k <= meta_.nr_chains; ++k) {
            for (const auto& f : phase2_files()) check(chain_dir(k) / f);
            for (const auto& f : phase3_files()) check(phase3_chain_dir(k) / f);
        }
    }

  private:
    fs::path dir_;
    StoreMeta meta_;
};

}  // namespace tfr
