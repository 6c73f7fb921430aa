#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tfr/ingest.hpp"
#include "tfr/linalg.hpp"
#include "tfr/types.hpp"

namespace tfr {

/// Outcome of the per-country bias/sd estimation: a row per unique covariate
/// combination plus the per-observation assignments, in observation order.
struct BiasSdFit {
    std::vector<MeasurementRow> table;
    std::vector<double> obs_bias;
    std::vector<double> obs_sd;
    std::vector<std::string> warnings;
};

namespace detail {

inline std::string format_cont(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

/// Dummy coding design: intercept, then per categorical covariate one column
/// per non-baseline level (alphabetically first level is the baseline),
/// then the continuous covariates as given.
struct Design {
    std::vector<std::vector<std::string>> levels;  // per covariate, sorted
    std::size_t n_cols = 1;

    static Design build(const RawDataset& raw, const std::vector<const RawObservation*>& obs) {
        Design d;
        d.levels.resize(raw.covariate_names.size());
        for (std::size_t k = 0; k < raw.covariate_names.size(); ++k) {
            std::set<std::string> seen;
            for (const auto* o : obs) seen.insert(o->covariates[k]);
            d.levels[k].assign(seen.begin(), seen.end());
        }
        d.n_cols = 1;
        for (const auto& lv : d.levels) d.n_cols += lv.empty() ? 0 : lv.size() - 1;
        d.n_cols += raw.cont_covariate_names.empty() ? 0 : raw.cont_covariate_names.size();
        return d;
    }

    std::vector<double> row(const RawObservation& o) const {
        std::vector<double> x;
        x.reserve(n_cols);
        x.push_back(1.0);
        for (std::size_t k = 0; k < levels.size(); ++k) {
            for (std::size_t l = 1; l < levels[k].size(); ++l)
                x.push_back(o.covariates[k] == levels[k][l] ? 1.0 : 0.0);
        }
        for (double v : o.cont_covariates) x.push_back(v);
        return x;
    }
};

inline std::vector<std::string> combination_of(const RawObservation& o) {
    std::vector<std::string> key = o.covariates;
    for (double v : o.cont_covariates) key.push_back(format_cont(v));
    return key;
}

}  // namespace detail

/// Fits per-country observation bias and standard deviation against the
/// reference series: OLS of the residuals on the data-quality covariates for
/// the bias, and OLS of the absolute centered residuals (rescaled by
/// sqrt(pi/2)) for the sd. Small fitted sds are raised to max(0.1, |bias|/2);
/// VR rows of unbiased-VR countries are pinned to bias 0 and sd 0.0161.
inline BiasSdFit fit_bias_sd(const RawDataset& raw, const ReferenceSeries& reference,
                             CountryId country, const std::set<CountryId>& unbiased_vr,
                             const std::string& source_column = "source") {
    BiasSdFit fit;

    std::vector<const RawObservation*> obs;
    for (const auto& o : raw.observations)
        if (o.country == country) obs.push_back(&o);
    if (obs.empty()) {
        fit.warnings.push_back("country " + std::to_string(country) +
                               ": no raw observations; measurement parameters empty");
        return fit;
    }

    std::vector<double> resid;
    resid.reserve(obs.size());
    for (const auto* o : obs)
        resid.push_back(o->tfr - reference_at(reference, align_year(o->year)));

    const auto design = detail::Design::build(raw, obs);
    std::vector<std::vector<double>> X;
    X.reserve(obs.size());
    for (const auto* o : obs) X.push_back(design.row(*o));

    const auto bias_fit = least_squares(X, resid);
    if (!bias_fit.dropped.empty())
        fit.warnings.push_back("country " + std::to_string(country) + ": dropped " +
                               std::to_string(bias_fit.dropped.size()) +
                               " aliased design column(s) in the bias model");

    std::vector<double> abs_centered(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i)
        abs_centered[i] = std::abs(resid[i] - dot_product(X[i], bias_fit.coef));
    const auto sd_fit = least_squares(X, abs_centered);

    const double mad_to_sd = std::sqrt(M_PI / 2.0);
    int source_idx = -1;
    for (std::size_t k = 0; k < raw.covariate_names.size(); ++k)
        if (raw.covariate_names[k] == source_column) source_idx = static_cast<int>(k);
    const bool vr_country = unbiased_vr.count(country) > 0;

    std::map<std::vector<std::string>, std::size_t> row_of;
    fit.obs_bias.resize(obs.size());
    fit.obs_sd.resize(obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) {
        double bias = dot_product(X[i], bias_fit.coef);
        double sd = dot_product(X[i], sd_fit.coef) * mad_to_sd;
        const double floor = std::max(0.1, std::abs(bias) / 2.0);
        if (sd < floor) sd = floor;
        bool overridden = false;
        if (vr_country && source_idx >= 0 && obs[i]->covariates[source_idx] == "VR") {
            bias = 0.0;
            sd = kUnbiasedVrSd;
            overridden = true;
        }
        fit.obs_bias[i] = bias;
        fit.obs_sd[i] = sd;

        auto key = detail::combination_of(*obs[i]);
        auto it = row_of.find(key);
        if (it == row_of.end()) {
            MeasurementRow row;
            row.combination = key;
            row.bias = bias;
            row.sd = sd;
            row.n_obs = 1;
            row.vr_override = overridden;
            row_of.emplace(std::move(key), fit.table.size());
            fit.table.push_back(std::move(row));
        } else {
            ++fit.table[it->second].n_obs;
        }
    }
    return fit;
}

}  // namespace tfr
