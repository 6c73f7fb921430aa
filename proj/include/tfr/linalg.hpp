#pragma once

#include <cmath>
#include <vector>

#include "tfr/common.hpp"

namespace tfr {

/// Ordinary least squares via modified Gram-Schmidt QR. Columns that are
/// numerically aliased with earlier ones are dropped deterministically (the
/// first occurrence is kept); dropped columns get a zero coefficient and are
/// reported through `dropped`.
struct LeastSquaresFit {
    std::vector<double> coef;     // one per input column, zeros for dropped ones
    std::vector<int> dropped;     // indices of dropped columns
};

inline LeastSquaresFit least_squares(const std::vector<std::vector<double>>& X,
                                     const std::vector<double>& y) {
    const std::size_t n = X.size();
    const std::size_t p = n == 0 ? 0 : X[0].size();
    LeastSquaresFit fit;
    fit.coef.assign(p, 0.0);
    if (n == 0 || p == 0) return fit;

    // Column-major working copy.
    std::vector<std::vector<double>> q;        // orthonormal kept columns
    std::vector<int> kept;
    std::vector<std::vector<double>> r_rows;   // R entries against kept columns
    const double tol = 1e-10;

    for (std::size_t j = 0; j < p; ++j) {
        std::vector<double> v(n);
        double norm0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            v[i] = X[i][j];
            norm0 += v[i] * v[i];
        }
        norm0 = std::sqrt(norm0);
        std::vector<double> rj(kept.size(), 0.0);
        for (std::size_t k = 0; k < q.size(); ++k) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += q[k][i] * v[i];
            rj[k] = dot;
            for (std::size_t i = 0; i < n; ++i) v[i] -= dot * q[k][i];
        }
        double norm = 0.0;
        for (double vi : v) norm += vi * vi;
        norm = std::sqrt(norm);
        if (norm <= tol * std::max(1.0, norm0)) {
            fit.dropped.push_back(static_cast<int>(j));
            continue;
        }
        for (auto& vi : v) vi /= norm;
        rj.push_back(norm);
        q.push_back(std::move(v));
        r_rows.push_back(std::move(rj));
        kept.push_back(static_cast<int>(j));
    }

    // Solve R beta = Q^T y by back substitution.
    const std::size_t m = kept.size();
    std::vector<double> qty(m, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += q[k][i] * y[i];
        qty[k] = dot;
    }
    std::vector<double> beta(m, 0.0);
    for (std::size_t k = m; k-- > 0;) {
        double s = qty[k];
        for (std::size_t j = k + 1; j < m; ++j) s -= r_rows[j][k] * beta[j];
        beta[k] = s / r_rows[k][k];
    }
    for (std::size_t k = 0; k < m; ++k) fit.coef[kept[k]] = beta[k];
    return fit;
}

inline double dot_product(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace tfr
