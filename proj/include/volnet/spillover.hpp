#pragma once

/// @file
/// Volatility spillover graphs: VAR(p) estimation, moving-average
/// coefficients, the generalized forecast-error variance decomposition with
/// row standardization, edge sparsification, per-window adjacency estimation
/// on common trading days, net spillovers and the omega participation rate.

#include "volnet/core.hpp"
#include "volnet/panel.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace volnet {

struct VARModel {
    std::size_t p = 0;
    std::vector<Matrix> coefficients; ///< Phi_1..Phi_p, each N x N
    std::vector<Matrix> coef_stderr;  ///< matching standard errors
    Vector intercept;
    Matrix residual_cov;
    double ridge = 0.0;
    std::size_t rows_used = 0;
    double spectral_radius = 0.0;
    bool stable = false;

    std::size_t dim() const { return static_cast<std::size_t>(residual_cov.rows()); }
};

/// Companion-form spectral radius of a set of VAR coefficient matrices.
inline double companion_spectral_radius(const std::vector<Matrix>& phi)
{
    if (phi.empty()) return 0.0;
    const auto N = phi.front().rows();
    const auto p = static_cast<Eigen::Index>(phi.size());
    Matrix C = Matrix::Zero(N * p, N * p);
    for (Eigen::Index i = 0; i < p; ++i) C.block(0, i * N, N, N) = phi[static_cast<std::size_t>(i)];
    if (p > 1) C.block(N, 0, N * (p - 1), N * (p - 1)).setIdentity();
    Eigen::EigenSolver<Matrix> es(C, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline std::size_t var_min_rows(std::size_t n, std::size_t p) { return n * p + p + 10; }

/// Equation-by-equation least squares of u_t on [1, u_{t-1}, ..., u_{t-p}],
/// with `ridge` added to the non-intercept diagonal of the Gram matrix.
inline VARModel fit_var(const Matrix& window, std::size_t p, double ridge)
{
    if (p == 0) throw ConfigError("VAR lag order must be positive");
    if (ridge < 0.0) throw ConfigError("ridge must be non-negative");
    const auto T = static_cast<std::size_t>(window.rows());
    const auto N = static_cast<std::size_t>(window.cols());
    if (T < var_min_rows(N, p))
        throw DataError("insufficient observations: " + std::to_string(T) + " rows, need " +
                        std::to_string(var_min_rows(N, p)));
    if (!window.allFinite()) throw DataError("VAR window contains non-finite values");

    const auto Ni = static_cast<Eigen::Index>(N);
    const auto pi = static_cast<Eigen::Index>(p);
    const auto rows = static_cast<Eigen::Index>(T - p);
    const Eigen::Index k = 1 + Ni * pi;
    Matrix X(rows, k);
    Matrix Y(rows, Ni);
    for (Eigen::Index r = 0; r < rows; ++r) {
        const Eigen::Index t = r + pi;
        X(r, 0) = 1.0;
        for (Eigen::Index lag = 1; lag <= pi; ++lag) X.block(r, 1 + (lag - 1) * Ni, 1, Ni) = window.row(t - lag);
        Y.row(r) = window.row(t);
    }
    Matrix G = X.transpose() * X;
    for (Eigen::Index j = 1; j < k; ++j) G(j, j) += ridge;

    Vector d = G.diagonal().cwiseSqrt();
    for (Eigen::Index j = 0; j < k; ++j)
        if (!(d(j) > 0.0)) throw NumericError("singular regressors (zero column)");
    const Matrix Gs = d.cwiseInverse().asDiagonal() * G * d.cwiseInverse().asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> es(Gs);
    const Vector ev = es.eigenvalues();
    if (es.info() != Eigen::Success || !(ev(0) > 1e-12 * ev(k - 1))) throw NumericError("singular regressors");

    const Matrix Ginv_s = es.eigenvectors() * ev.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    const Matrix Ginv = d.cwiseInverse().asDiagonal() * Ginv_s * d.cwiseInverse().asDiagonal();
    const Matrix B = Ginv * (X.transpose() * Y);
    if (!B.allFinite()) throw NumericError("non-finite VAR coefficients");
    const Matrix E = Y - X * B;

    VARModel m;
    m.p = p;
    m.ridge = ridge;
    m.rows_used = static_cast<std::size_t>(rows);
    m.intercept = B.row(0).transpose();
    m.residual_cov = E.transpose() * E / static_cast<double>(rows - k);
    m.residual_cov = 0.5 * (m.residual_cov + m.residual_cov.transpose()).eval();
    for (Eigen::Index lag = 0; lag < pi; ++lag) {
        Matrix phi(Ni, Ni), se(Ni, Ni);
        for (Eigen::Index i = 0; i < Ni; ++i)
            for (Eigen::Index j = 0; j < Ni; ++j) {
                const Eigen::Index col = 1 + lag * Ni + j;
                phi(i, j) = B(col, i);
                se(i, j) = std::sqrt(m.residual_cov(i, i) * Ginv(col, col));
            }
        m.coefficients.push_back(std::move(phi));
        m.coef_stderr.push_back(std::move(se));
    }
    m.spectral_radius = companion_spectral_radius(m.coefficients);
    m.stable = m.spectral_radius < 1.0;
    return m;
}

/// B_0 = I, B_i = sum_{j=1..p} Phi_j B_{i-j} (B_{i<0} = 0).
inline std::vector<Matrix> ma_coefficients(const VARModel& var, std::size_t n_terms)
{
    if (n_terms == 0) throw ConfigError("need at least one MA term");
    const auto N = static_cast<Eigen::Index>(var.dim());
    std::vector<Matrix> B;
    B.reserve(n_terms);
    B.push_back(Matrix::Identity(N, N));
    for (std::size_t i = 1; i < n_terms; ++i) {
        Matrix acc = Matrix::Zero(N, N);
        for (std::size_t j = 1; j <= var.p && j <= i; ++j) acc += var.coefficients[j - 1] * B[i - j];
        B.push_back(std::move(acc));
    }
    return B;
}

struct SpilloverGraph {
    Matrix theta;           ///< row-standardized decomposition shares, N x N
    std::size_t horizon = 0;
    std::size_t p = 0;
    double ridge = 0.0;
    double spectral_radius = 0.0;
    bool stable = false;
    std::size_t rows_used = 0;
    bool sparsified = false;
    double keep_fraction = 1.0;

    std::size_t dim() const { return static_cast<std::size_t>(theta.rows()); }
};

/// Generalized H-step forecast-error variance decomposition, row-standardized:
///
///   theta_ij = sigma_jj^{-1} sum_h (e_i' B_h S e_j)^2 / sum_h (e_i' B_h S B_h' e_i)
///
/// followed by division of each row by its sum.
inline SpilloverGraph gfevd(const VARModel& var, std::size_t horizon)
{
    if (horizon == 0) throw ConfigError("FEVD horizon must be positive");
    const Matrix& S = var.residual_cov;
    const auto N = S.rows();
    for (Eigen::Index j = 0; j < N; ++j)
        if (!(S(j, j) > 0.0)) throw NumericError("zero diagonal in residual covariance");
    const auto B = ma_coefficients(var, horizon);

    Matrix num = Matrix::Zero(N, N);
    Vector den = Vector::Zero(N);
    for (const Matrix& Bh : B) {
        const Matrix BS = Bh * S;
        num += BS.cwiseProduct(BS);
        den += (BS * Bh.transpose()).diagonal();
    }
    Matrix theta(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) theta(i, j) = num(i, j) / S(j, j) / den(i);
    if (!theta.allFinite()) throw NumericError("non-finite variance decomposition");
    for (Eigen::Index i = 0; i < N; ++i) {
        const double rs = theta.row(i).sum();
        if (!(rs > 0.0) || !std::isfinite(rs)) throw NumericError("degenerate decomposition row");
        theta.row(i) /= rs;
    }

    SpilloverGraph g;
    g.theta = std::move(theta);
    g.horizon = horizon;
    g.p = var.p;
    g.ridge = var.ridge;
    g.spectral_radius = var.spectral_radius;
    g.stable = var.stable;
    g.rows_used = var.rows_used;
    return g;
}

/// Keeps the ceil(keep_fraction * N(N-1)) largest off-diagonal entries
/// (global ranking, ties to the lexicographically smaller (row, col)),
/// zeroes the other off-diagonals and always keeps the diagonal. Rows are
/// not renormalized.
inline SpilloverGraph sparsify(const SpilloverGraph& graph, double keep_fraction)
{
    if (!(keep_fraction >= 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must lie in [0, 1]");
    const auto N = graph.theta.rows();
    struct Cell {
        double w;
        Eigen::Index i, j;
    };
    std::vector<Cell> cells;
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j)
            if (i != j) cells.push_back({graph.theta(i, j), i, j});
    // Guard against products like 0.7 * 10 = 7.000000000000001.
    const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(cells.size()) - 1e-9));
    std::stable_sort(cells.begin(), cells.end(), [](const Cell& a, const Cell& b) { return a.w > b.w; });

    SpilloverGraph out = graph;
    for (std::size_t c = keep; c < cells.size(); ++c) out.theta(cells[c].i, cells[c].j) = 0.0;
    out.sparsified = true;
    out.keep_fraction = keep_fraction;
    return out;
}

struct SpilloverSettings {
    std::size_t p = 3;
    std::size_t horizon = 10;
    double keep_fraction = 0.5;
    std::size_t min_rows = 0; ///< 0 selects default_min_rows(N, p)
    double ridge = 1e-8;
};

/// ceil(5 (N p + 1) / N).
inline std::size_t default_min_rows(std::size_t n, std::size_t p) { return (5 * (n * p + 1) + n - 1) / n; }

inline std::size_t effective_min_rows(const SpilloverSettings& s, std::size_t n)
{
    return s.min_rows ? s.min_rows : default_min_rows(n, s.p);
}

inline SpilloverGraph estimate_graph(const Matrix& complete_rows, const SpilloverSettings& s)
{
    return sparsify(gfevd(fit_var(complete_rows, s.p, s.ridge), s.horizon), s.keep_fraction);
}

/// Result of a per-window estimate: either a graph or a fallback signal telling
/// the caller to substitute a previously valid graph.
struct AdjacencyEstimate {
    std::optional<SpilloverGraph> graph;
    std::size_t common_rows = 0;
    std::string fallback_reason;

    bool fallback() const { return !graph.has_value(); }
};

/// Extracts the rows where all markets trade, then fit_var -> gfevd -> sparsify.
/// Signals fallback when fewer than min_rows common rows exist or when the
/// estimation itself fails on the reduced sample.
inline AdjacencyEstimate batch_adjacency(const Matrix& values, const Mask& observed, const SpilloverSettings& s)
{
    const auto N = values.cols();
    std::vector<Eigen::Index> common;
    for (Eigen::Index t = 0; t < values.rows(); ++t)
        if (observed.row(t).all()) common.push_back(t);
    AdjacencyEstimate est;
    est.common_rows = common.size();
    const std::size_t need = effective_min_rows(s, static_cast<std::size_t>(N));
    if (common.size() < need) {
        est.fallback_reason = "only " + std::to_string(common.size()) + " common rows (need " + std::to_string(need) + ")";
        return est;
    }
    Matrix rows(static_cast<Eigen::Index>(common.size()), N);
    for (std::size_t r = 0; r < common.size(); ++r) rows.row(static_cast<Eigen::Index>(r)) = values.row(common[r]);
    try {
        est.graph = estimate_graph(rows, s);
    } catch (const Error& e) {
        est.fallback_reason = e.what();
    }
    return est;
}

/// Graph over all complete rows of a panel row range.
inline AdjacencyEstimate panel_adjacency(const RVPanel& panel, std::size_t first, std::size_t last,
                                         const SpilloverSettings& s)
{
    const auto n = static_cast<Eigen::Index>(last - first);
    return batch_adjacency(panel.values().middleRows(static_cast<Eigen::Index>(first), n),
                           panel.observed().middleRows(static_cast<Eigen::Index>(first), n), s);
}

/// 100 * (transmitted - received) per market; positive marks a net transmitter.
inline Vector net_spillover(const SpilloverGraph& graph)
{
    const Matrix& th = graph.theta;
    const auto N = th.rows();
    Vector net(N);
    for (Eigen::Index i = 0; i < N; ++i) {
        double to = 0.0, from = 0.0;
        for (Eigen::Index j = 0; j < N; ++j) {
            if (j == i) continue;
            to += th(j, i);
            from += th(i, j);
        }
        net(i) = 100.0 * (to - from);
    }
    return net;
}

/// Share of days market n is closed among days where at least `active_threshold`
/// other markets trade.
inline Vector omega(const RVPanel& panel, std::size_t active_threshold = 5)
{
    if (panel.rows() == 0) throw DataError("empty panel");
    const auto N = static_cast<Eigen::Index>(panel.cols());
    Vector w(N);
    for (Eigen::Index n = 0; n < N; ++n) {
        std::size_t qualifying = 0, inactive = 0;
        for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(panel.rows()); ++t) {
            const auto row = panel.observed().row(t);
            const auto others = static_cast<std::size_t>(row.count()) - (row(n) ? 1u : 0u);
            if (others < active_threshold) continue;
            ++qualifying;
            if (!row(n)) ++inactive;
        }
        if (qualifying == 0)
            throw DataError("threshold never met for index " + panel.indices()[static_cast<std::size_t>(n)]);
        w(n) = static_cast<double>(inactive) / static_cast<double>(qualifying);
    }
    return w;
}

inline nlohmann::json to_json(const SpilloverGraph& g, const std::vector<std::string>& indices)
{
    nlohmann::json theta = nlohmann::json::array();
    for (Eigen::Index i = 0; i < g.theta.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < g.theta.cols(); ++j) row.push_back(g.theta(i, j));
        theta.push_back(std::move(row));
    }
    return {{"indices", indices},
            {"horizon", g.horizon},
            {"p", g.p},
            {"keep_fraction", g.keep_fraction},
            {"sparsified", g.sparsified},
            {"theta", std::move(theta)},
            {"provenance",
             {{"ridge", g.ridge},
              {"spectral_radius", g.spectral_radius},
              {"stable", g.stable},
              {"rows_used", g.rows_used}}}};
}

inline SpilloverGraph graph_from_json(const nlohmann::json& j)
{
    SpilloverGraph g;
    const auto& th = j.at("theta");
    const auto N = static_cast<Eigen::Index>(th.size());
    g.theta.resize(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        if (th[static_cast<std::size_t>(i)].size() != static_cast<std::size_t>(N)) throw DataError("theta not square");
        for (Eigen::Index k = 0; k < N; ++k)
            g.theta(i, k) = th[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
    }
    g.horizon = j.at("horizon").get<std::size_t>();
    g.p = j.at("p").get<std::size_t>();
    g.keep_fraction = j.at("keep_fraction").get<double>();
    g.sparsified = j.value("sparsified", g.keep_fraction < 1.0);
    if (j.contains("provenance")) {
        const auto& pv = j.at("provenance");
        g.ridge = pv.value("ridge", 0.0);
        g.spectral_radius = pv.value("spectral_radius", 0.0);
        g.stable = pv.value("stable", false);
        g.rows_used = pv.value("rows_used", std::size_t{0});
    }
    return g;
}

/// `src,dst,weight` rows for every non-zero entry; src is the row market,
/// dst the column market, matching the adjacency orientation.
inline void write_edge_list(std::ostream& out, const SpilloverGraph& g, const std::vector<std::string>& indices)
{
    out << "src,dst,weight\n";
    for (Eigen::Index i = 0; i < g.theta.rows(); ++i)
        for (Eigen::Index j = 0; j < g.theta.cols(); ++j)
            if (g.theta(i, j) != 0.0)
                out << indices[static_cast<std::size_t>(i)] << ',' << indices[static_cast<std::size_t>(j)] << ','
                    << format_double(g.theta(i, j)) << '\n';
}

} // namespace volnet
