#pragma once

#include <vector>

#include "tfr/types.hpp"

namespace tfr {

/// True if series[t] is a local maximum. Interior points must be >= both
/// neighbors; endpoints >= their single neighbor. Plateaus count at every
/// plateau index.
inline bool is_local_max(const std::vector<double>& s, int t) {
    const int n = static_cast<int>(s.size());
    const bool left_ok = (t == 0) || s[t] >= s[t - 1];
    const bool right_ok = (t == n - 1) || s[t] >= s[t + 1];
    return left_ok && right_ok;
}

/// Start period of the fertility transition: the latest local maximum that
/// lies above 5.5 and within 0.5 of the global maximum. Returns
/// PhaseMarkers::kBeforeStart when no local maximum qualifies, meaning the
/// decline began before the data.
inline int find_tau(const std::vector<double>& series) {
    const int n = static_cast<int>(series.size());
    if (n < 3) throw DataError("find_tau: series must have at least 3 periods");
    double global_max = series[0];
    for (double v : series) global_max = std::max(global_max, v);

    int tau = PhaseMarkers::kBeforeStart;
    for (int t = 0; t < n; ++t) {
        if (!is_local_max(series, t)) continue;
        if (series[t] > 5.5 && global_max - series[t] < 0.5) tau = t;
    }
    return tau;
}

namespace detail {
/// Two consecutive increases with all three values below 2; returns the
/// middle index of the first such triple, or n when none exists.
inline int lambda_rule(const std::vector<double>& s) {
    const int n = static_cast<int>(s.size());
    for (int t = 1; t + 1 < n; ++t) {
        if (s[t] > s[t - 1] && s[t + 1] > s[t] && s[t - 1] < 2.0 && s[t] < 2.0 && s[t + 1] < 2.0)
            return t;
    }
    return n;
}

/// Non-overlapping five-year block averages aligned to the series start; a
/// trailing partial block is averaged over its available years.
inline std::vector<double> five_year_averages(const std::vector<double>& s) {
    std::vector<double> out;
    const int n = static_cast<int>(s.size());
    for (int b = 0; b * 5 < n; ++b) {
        double sum = 0.0;
        int count = 0;
        for (int j = b * 5; j < std::min(n, b * 5 + 5); ++j) {
            sum += s[j];
            ++count;
        }
        out.push_back(sum / count);
    }
    return out;
}
}  // namespace detail

/// Start period of the post-transition phase. In five-year mode the rule is
/// applied directly; in annual mode it is applied to non-overlapping
/// five-year averages and the block start is mapped back to an annual index.
/// Returns n_periods when Phase III has not been reached.
inline int find_lambda(const std::vector<double>& series, bool annual) {
    const int n = static_cast<int>(series.size());
    if (n < 3) throw DataError("find_lambda: series must have at least 3 periods");
    if (!annual) return detail::lambda_rule(series);

    const std::vector<double> avg = detail::five_year_averages(series);
    const int b = detail::lambda_rule(avg);
    if (b >= static_cast<int>(avg.size())) return n;
    return std::min(b * 5, n - 1);
}

inline PhaseMarkers detect_phases(const std::vector<double>& series, bool annual) {
    PhaseMarkers m;
    m.tau = find_tau(series);
    m.lambda = find_lambda(series, annual);
    // Degenerate detection order (possible on erratic series): treat the
    // country as not having reached Phase III rather than overlap the phases.
    if (m.tau_in_grid() && m.lambda <= m.tau) m.lambda = static_cast<int>(series.size());
    return m;
}

}  // namespace tfr
