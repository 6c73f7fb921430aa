#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tfr/csv.hpp"
#include "tfr/types.hpp"

namespace tfr {

/// Parsed raw-observation file plus the declared covariate layout.
struct RawDataset {
    std::vector<RawObservation> observations;
    std::vector<std::string> covariate_names;
    std::vector<std::string> cont_covariate_names;
};

/// Calendar year containing a decimal time stamp.
inline int align_year(double year) {
    return static_cast<int>(std::floor(year));
}

/// Loads a raw TFR CSV. Required columns: country_code, year, tfr, plus every
/// declared covariate. Rows with missing covariate values get the category
/// "unknown"; missing continuous values become 0 with a warning entry.
inline RawDataset load_raw(const std::string& path,
                           const std::vector<std::string>& covariates,
                           const std::vector<std::string>& cont_covariates,
                           std::vector<std::string>* warnings = nullptr) {
    const csv::Table table = csv::read_file(path);
    RawDataset ds;
    ds.covariate_names = covariates;
    ds.cont_covariate_names = cont_covariates;

    const int ic = table.column("country_code");
    const int iy = table.column("year");
    const int it = table.column("tfr");
    if (ic < 0) throw DataError(path + ": missing required column 'country_code'");
    if (iy < 0) throw DataError(path + ": missing required column 'year'");
    if (it < 0) throw DataError(path + ": missing required column 'tfr'");

    std::vector<int> cat_idx, cont_idx;
    for (const auto& name : covariates) {
        const int i = table.column(name);
        if (i < 0) throw DataError(path + ": missing covariate column '" + name + "'");
        cat_idx.push_back(i);
    }
    for (const auto& name : cont_covariates) {
        const int i = table.column(name);
        if (i < 0) throw DataError(path + ": missing covariate column '" + name + "'");
        cont_idx.push_back(i);
    }

    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line_no = r + 2;  // 1-based, after the header
        auto cell = [&](int i) -> std::string {
            return i < static_cast<int>(row.size()) ? csv::trim(row[i]) : std::string();
        };
        RawObservation obs;
        double code;
        if (!csv::parse_double(cell(ic), code))
            throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric country_code");
        obs.country = static_cast<CountryId>(code);
        if (!csv::parse_double(cell(iy), obs.year))
            throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric year");
        if (!csv::parse_double(cell(it), obs.tfr))
            throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric tfr");
        if (!(obs.tfr > 0.0))
            throw DataError(path + ":" + std::to_string(line_no) + ": tfr must be positive");
        if (obs.year < 1900.0 || obs.year > 2100.0)
            throw DataError(path + ":" + std::to_string(line_no) + ": year outside [1900, 2100]");
        for (int i : cat_idx) {
            std::string v = cell(i);
            obs.covariates.push_back(v.empty() ? "unknown" : v);
        }
        for (int i : cont_idx) {
            double v = 0.0;
            if (!csv::parse_double(cell(i), v)) {
                v = 0.0;
                if (warnings)
                    warnings->push_back(path + ":" + std::to_string(line_no) +
                                        ": missing continuous covariate treated as 0");
            }
            obs.cont_covariates.push_back(v);
        }
        ds.observations.push_back(std::move(obs));
    }
    return ds;
}

/// Reference CSV: country_code plus one column per period labeled by its
/// start year. Returns one series per row, on the grid implied by the labels.
inline std::vector<ReferenceSeries> load_reference(const std::string& path) {
    const csv::Table table = csv::read_file(path);
    const int ic = table.column("country_code");
    if (ic < 0) throw DataError(path + ": missing required column 'country_code'");

    std::vector<std::pair<int, int>> year_cols;  // (year, column index)
    for (std::size_t i = 0; i < table.header.size(); ++i) {
        if (static_cast<int>(i) == ic) continue;
        double y;
        if (csv::parse_double(table.header[i], y))
            year_cols.emplace_back(static_cast<int>(y), static_cast<int>(i));
    }
    if (year_cols.size() < 3)
        throw DataError(path + ": reference file needs at least 3 period columns");
    std::sort(year_cols.begin(), year_cols.end());
    const int step = year_cols[1].first - year_cols[0].first;
    if (step != 1 && step != 5)
        throw DataError(path + ": period columns must be annual or five-year");
    for (std::size_t i = 1; i < year_cols.size(); ++i) {
        if (year_cols[i].first - year_cols[i - 1].first != step)
            throw DataError(path + ": period columns are not evenly spaced");
    }

    TimeGrid grid{year_cols.front().first, step, static_cast<int>(year_cols.size())};
    std::vector<ReferenceSeries> out;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::size_t line_no = r + 2;
        ReferenceSeries s;
        s.grid = grid;
        double code;
        if (!csv::parse_double(row.size() > static_cast<std::size_t>(ic) ? row[ic] : "", code))
            throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric country_code");
        s.country = static_cast<CountryId>(code);
        for (const auto& [year, col] : year_cols) {
            double v;
            if (col >= static_cast<int>(row.size()) || !csv::parse_double(row[col], v))
                throw DataError(path + ":" + std::to_string(line_no) + ": non-numeric TFR for " +
                                std::to_string(year));
            if (!(v > 0.0))
                throw DataError(path + ":" + std::to_string(line_no) + ": TFR must be positive");
            s.values.push_back(v);
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// Value of a reference series at a calendar year, linearly interpolated
/// between the two flanking periods (exact at anchors).
inline double reference_at(const ReferenceSeries& s, double year) {
    const auto& g = s.grid;
    const double pos = (year - g.start_year) / g.step;
    if (pos < 0.0 || pos > g.n_periods - 1)
        throw DataError("year " + std::to_string(year) + " outside reference span for country " +
                        std::to_string(s.country));
    int l = static_cast<int>(std::floor(pos));
    l = std::min(l, g.n_periods - 2);
    const double w = pos - l;
    return (1.0 - w) * s.values[l] + w * s.values[l + 1];
}

/// Linear interpolation of a five-year series onto an annual grid.
inline ReferenceSeries interpolate_reference(const ReferenceSeries& series, const TimeGrid& target) {
    if (series.grid.step != 5) throw DataError("interpolate_reference: source must be five-year");
    if (target.step != 1) throw DataError("interpolate_reference: target must be annual");
    if (target.start_year < series.grid.start_year || target.last_year() > series.grid.last_year())
        throw DataError("interpolate_reference: target span outside source span for country " +
                        std::to_string(series.country));
    ReferenceSeries out;
    out.country = series.country;
    out.grid = target;
    out.values.reserve(target.n_periods);
    for (int t = 0; t < target.n_periods; ++t)
        out.values.push_back(reference_at(series, target.year_of(t)));
    return out;
}

/// Restricts a series to a sub-grid with the same step.
inline ReferenceSeries restrict_reference(const ReferenceSeries& series, const TimeGrid& target) {
    if (series.grid.step != target.step)
        throw DataError("restrict_reference: grid step mismatch");
    if (target.start_year < series.grid.start_year || target.last_year() > series.grid.last_year())
        throw DataError("reference does not cover the estimation span for country " +
                        std::to_string(series.country));
    if ((target.start_year - series.grid.start_year) % target.step != 0)
        throw DataError("restrict_reference: grids are not aligned");
    ReferenceSeries out;
    out.country = series.country;
    out.grid = target;
    const int offset = (target.start_year - series.grid.start_year) / target.step;
    out.values.assign(series.values.begin() + offset,
                      series.values.begin() + offset + target.n_periods);
    return out;
}

struct AttachResult {
    // Parallel to the country ordering supplied by the caller.
    std::vector<std::vector<AttachedObs>> attached;
    int dropped = 0;  // observations outside the grid or for unknown countries
};

/// Buckets raw observations onto the estimation grid. Annual observations
/// land in the period containing floor(year); five-year observations are
/// linked to the two flanking period latents with interpolation weights.
/// Bias/sd fields are left at defaults; the measurement module fills them.
inline AttachResult attach_observations(const RawDataset& raw, const TimeGrid& grid,
                                        const std::vector<CountryId>& countries) {
    AttachResult res;
    res.attached.resize(countries.size());
    std::map<CountryId, int> index;
    for (std::size_t i = 0; i < countries.size(); ++i) index[countries[i]] = static_cast<int>(i);

    for (const auto& obs : raw.observations) {
        const auto it = index.find(obs.country);
        if (it == index.end()) {
            ++res.dropped;
            continue;
        }
        const int year = align_year(obs.year);
        AttachedObs a;
        a.y = obs.tfr;
        if (grid.step == 1) {
            const int t = year - grid.start_year;
            if (t < 0 || t >= grid.n_periods) {
                ++res.dropped;
                continue;
            }
            a.period = t;
            a.w_next = 0.0;
        } else {
            const double pos = static_cast<double>(year - grid.start_year) / grid.step;
            if (pos < 0.0 || pos > grid.n_periods - 1) {
                ++res.dropped;
                continue;
            }
            int l = static_cast<int>(std::floor(pos));
            l = std::min(l, grid.n_periods - 2);
            a.period = l;
            a.w_next = pos - l;
        }
        res.attached[it->second].push_back(a);
    }
    return res;
}

}  // namespace tfr
