#pragma once

#include "volnet/core.hpp"

#include <string>

namespace volnet {

struct OlsResult {
    Vector coef;
    Vector stderr_;   ///< classical standard errors
    Vector residuals;
    double sigma2 = 0.0; ///< residual variance, RSS / (n - k)
};

/// Least squares y ~ X through a column-pivoted QR of the column-normalized
/// design. Rank deficiency (relative pivot below 1e-10) is reported as
/// collinearity instead of returning an arbitrary minimum-norm solution.
inline OlsResult ols(const Matrix& X, const Vector& y, const std::string& context = "regression")
{
    const auto n = X.rows();
    const auto k = X.cols();
    if (n <= k) throw DataError(context + ": insufficient observations (" + std::to_string(n) + " rows for " +
                                std::to_string(k) + " regressors)");
    Vector scale = X.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < k; ++j)
        if (!(scale(j) > 0.0)) throw NumericError(context + ": collinear features (zero column)");
    const Matrix Xs = X * scale.cwiseInverse().asDiagonal();
    Eigen::ColPivHouseholderQR<Matrix> qr(Xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < k) throw NumericError(context + ": collinear features");

    OlsResult r;
    const Vector bs = qr.solve(y);
    r.coef = bs.cwiseQuotient(scale);
    r.residuals = y - X * r.coef;
    r.sigma2 = r.residuals.squaredNorm() / static_cast<double>(n - k);

    const Matrix R = qr.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    const Matrix Rinv = R.template triangularView<Eigen::Upper>().solve(Matrix::Identity(k, k));
    const Matrix covp = Rinv * Rinv.transpose();
    const auto& perm = qr.colsPermutation();
    const Matrix cov_s = perm * covp * perm.transpose();
    r.stderr_.resize(k);
    for (Eigen::Index j = 0; j < k; ++j) r.stderr_(j) = std::sqrt(r.sigma2 * cov_s(j, j)) / scale(j);
    return r;
}

} // namespace volnet
