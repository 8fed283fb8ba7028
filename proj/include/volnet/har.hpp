#pragma once

/// @file
/// HAR-family baselines: HAR-RV, VHAR-RV, HAR-RV-KS, GHAR and GNNHAR.
///
/// All linear variants are stored in one matrix form,
///
///     v_t = alpha + B_d d_t + B_w w_t + B_m m_t,
///
/// where d, w, m are the daily/weekly/monthly regressor vectors. HAR keeps
/// the B's diagonal, VHAR fills them, HAR-KS adds the cross daily lags as
/// off-diagonals of B_d, and GHAR folds its neighbourhood terms in as
/// beta I + gamma A_norm. GNNHAR adds a non-linear graph term on top.

#include "volnet/core.hpp"
#include "volnet/ols.hpp"
#include "volnet/rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <optional>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace volnet {

enum class WindowMode { Overlapping, NonOverlapping };

enum class HarVariant { HAR, VHAR, HARKS, GHAR, GNNHAR };

inline const char* to_string(HarVariant v)
{
    switch (v) {
    case HarVariant::HAR: return "har";
    case HarVariant::VHAR: return "vhar";
    case HarVariant::HARKS: return "har-ks";
    case HarVariant::GHAR: return "ghar";
    case HarVariant::GNNHAR: return "gnnhar";
    }
    return "?";
}

inline constexpr std::size_t kHarLookback = 22;

struct HarFeatures {
    double daily;
    double weekly;
    double monthly;
};

/// Regressors for the value at position `t` (0-based) from the 22 values
/// before it. NaN marks a missing value.
///   overlapping:     (v[t-1], mean v[t-5..t-1], mean v[t-22..t-1])
///   non-overlapping: (v[t-1], mean v[t-5..t-2], mean v[t-22..t-6])
inline HarFeatures har_features(std::span<const double> series, std::size_t t, WindowMode mode)
{
    if (t < kHarLookback || t > series.size()) throw DataError("insufficient history for HAR features");
    auto mean = [&](std::size_t from_lag, std::size_t to_lag) { // lags inclusive, from_lag >= to_lag
        double s = 0.0;
        for (std::size_t lag = to_lag; lag <= from_lag; ++lag) {
            const double v = series[t - lag];
            if (std::isnan(v)) throw DataError("missing value in HAR lookback");
            s += v;
        }
        return s / static_cast<double>(from_lag - to_lag + 1);
    };
    const double d = series[t - 1];
    if (std::isnan(d)) throw DataError("missing value in HAR lookback");
    if (mode == WindowMode::Overlapping) return {d, mean(5, 1), mean(22, 1)};
    return {d, mean(5, 2), mean(22, 6)};
}

/// Feature block for all N columns at row t of a complete T x N history.
inline std::array<Vector, 3> har_feature_vectors(const Matrix& history, std::size_t t, WindowMode mode)
{
    if (t < kHarLookback || t > static_cast<std::size_t>(history.rows()))
        throw DataError("insufficient history for HAR features");
    const auto lookback = history.middleRows(static_cast<Eigen::Index>(t - kHarLookback), kHarLookback);
    if (!lookback.allFinite()) throw DataError("missing value in HAR lookback");
    // row 21 is lag 1, row 0 is lag 22
    std::array<Vector, 3> f;
    f[0] = lookback.row(21).transpose();
    if (mode == WindowMode::Overlapping) {
        f[1] = lookback.bottomRows(5).colwise().mean().transpose();
        f[2] = lookback.colwise().mean().transpose();
    } else {
        f[1] = lookback.middleRows(17, 4).colwise().mean().transpose();
        f[2] = lookback.topRows(17).colwise().mean().transpose();
    }
    return f;
}

/// Parameters of the non-linear graph term: H0 = [d, w, m] (N x 3),
/// H_{l+1} = relu(A_norm H_l Theta_l), contribution H_L gamma.
struct GnnTerm {
    Matrix adjacency_norm;        ///< N x N, D^{-1/2} A_sym D^{-1/2}
    std::vector<Matrix> theta;    ///< one 3 x 3 matrix per layer
    Vector gamma = Vector::Zero(3);
};

struct HARCoefficients {
    HarVariant variant = HarVariant::HAR;
    WindowMode mode = WindowMode::Overlapping;
    Vector alpha;
    Matrix beta_d, beta_w, beta_m;
    Matrix se_d, se_w, se_m; ///< standard errors on the same layout (zero where not estimated)
    Vector se_alpha;
    /// Raw scalars for pooled variants: beta_d, beta_w, beta_m, gamma_d, gamma_w, gamma_m.
    std::vector<double> pooled;
    std::vector<double> pooled_se;
    std::optional<GnnTerm> gnn;

    std::size_t dim() const { return static_cast<std::size_t>(alpha.size()); }
};

namespace detail {

inline Matrix relu(const Matrix& m) { return m.cwiseMax(0.0); }

inline Vector gnn_contribution(const GnnTerm& g, const Matrix& H0)
{
    Matrix H = H0;
    for (const Matrix& th : g.theta) H = relu(g.adjacency_norm * H * th);
    return H * g.gamma;
}

} // namespace detail

/// One-step forecast from the last 22 rows of a complete history.
inline Vector forecast_har(const HARCoefficients& c, const Matrix& history)
{
    const auto T = static_cast<std::size_t>(history.rows());
    if (T < kHarLookback) throw DataError("HAR forecast needs 22 rows of history");
    const auto f = har_feature_vectors(history, T, c.mode);
    Vector out = c.alpha + c.beta_d * f[0] + c.beta_w * f[1] + c.beta_m * f[2];
    if (c.gnn) {
        Matrix H0(history.cols(), 3);
        H0 << f[0], f[1], f[2];
        out += detail::gnn_contribution(*c.gnn, H0);
    }
    return out;
}

struct HarFit {
    Vector coef; ///< alpha, beta_d, beta_w, beta_m
    Vector se;
};

namespace detail {

inline void require_rows(std::size_t T, std::size_t regressors, const char* what)
{
    const std::size_t usable = T > kHarLookback ? T - kHarLookback : 0;
    if (usable < 50 || usable <= regressors)
        throw DataError(std::string(what) + ": insufficient observations (" + std::to_string(usable) +
                        " usable rows)");
}

inline HARCoefficients blank(HarVariant v, WindowMode mode, Eigen::Index N)
{
    HARCoefficients c;
    c.variant = v;
    c.mode = mode;
    c.alpha = Vector::Zero(N);
    c.se_alpha = Vector::Zero(N);
    c.beta_d = c.beta_w = c.beta_m = Matrix::Zero(N, N);
    c.se_d = c.se_w = c.se_m = Matrix::Zero(N, N);
    return c;
}

/// Feature blocks for every usable row: rows t = 22..T-1.
struct Design {
    std::vector<std::array<Vector, 3>> feats;
    Matrix target; ///< (T-22) x N
};

inline Design design(const Matrix& v, WindowMode mode)
{
    Design d;
    const auto T = static_cast<std::size_t>(v.rows());
    d.target = v.bottomRows(static_cast<Eigen::Index>(T - kHarLookback));
    for (std::size_t t = kHarLookback; t < T; ++t) d.feats.push_back(har_feature_vectors(v, t, mode));
    return d;
}

} // namespace detail

/// Univariate HAR by least squares on one complete series.
inline HarFit fit_har(std::span<const double> series, WindowMode mode = WindowMode::Overlapping)
{
    detail::require_rows(series.size(), 4, "HAR");
    const std::size_t rows = series.size() - kHarLookback;
    Matrix X(static_cast<Eigen::Index>(rows), 4);
    Vector y(static_cast<Eigen::Index>(rows));
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t t = r + kHarLookback;
        const auto f = har_features(series, t, mode);
        X.row(static_cast<Eigen::Index>(r)) << 1.0, f.daily, f.weekly, f.monthly;
        y(static_cast<Eigen::Index>(r)) = series[t];
        if (std::isnan(series[t])) throw DataError("missing value in HAR target");
    }
    const auto r = ols(X, y, "HAR");
    return {r.coef, r.stderr_};
}

/// HAR fitted independently per column of a complete T x N matrix.
inline HARCoefficients fit_har_panel(const Matrix& v, WindowMode mode = WindowMode::Overlapping)
{
    const auto N = v.cols();
    auto c = detail::blank(HarVariant::HAR, mode, N);
    std::vector<double> col(static_cast<std::size_t>(v.rows()));
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index r = 0; r < v.rows(); ++r) col[static_cast<std::size_t>(r)] = v(r, n);
        const auto f = fit_har(col, mode);
        c.alpha(n) = f.coef(0);
        c.beta_d(n, n) = f.coef(1);
        c.beta_w(n, n) = f.coef(2);
        c.beta_m(n, n) = f.coef(3);
        c.se_alpha(n) = f.se(0);
        c.se_d(n, n) = f.se(1);
        c.se_w(n, n) = f.se(2);
        c.se_m(n, n) = f.se(3);
    }
    return c;
}

/// VHAR: each equation regresses on all 3N regressors plus an intercept.
inline HARCoefficients fit_vhar(const Matrix& v, WindowMode mode = WindowMode::Overlapping)
{
    const auto N = v.cols();
    detail::require_rows(static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(3 * N + 1), "VHAR");
    const auto d = detail::design(v, mode);
    const auto rows = static_cast<Eigen::Index>(d.feats.size());
    Matrix X(rows, 3 * N + 1);
    for (Eigen::Index r = 0; r < rows; ++r) {
        X(r, 0) = 1.0;
        for (int b = 0; b < 3; ++b) X.block(r, 1 + b * N, 1, N) = d.feats[static_cast<std::size_t>(r)][b].transpose();
    }
    auto c = detail::blank(HarVariant::VHAR, mode, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        const auto r = ols(X, d.target.col(i), "VHAR");
        c.alpha(i) = r.coef(0);
        c.se_alpha(i) = r.stderr_(0);
        c.beta_d.row(i) = r.coef.segment(1, N).transpose();
        c.beta_w.row(i) = r.coef.segment(1 + N, N).transpose();
        c.beta_m.row(i) = r.coef.segment(1 + 2 * N, N).transpose();
        c.se_d.row(i) = r.stderr_.segment(1, N).transpose();
        c.se_w.row(i) = r.stderr_.segment(1 + N, N).transpose();
        c.se_m.row(i) = r.stderr_.segment(1 + 2 * N, N).transpose();
    }
    return c;
}

/// HAR-KS: own HAR terms plus the other markets' lagged daily values.
inline HARCoefficients fit_har_ks(const Matrix& v, WindowMode mode = WindowMode::Overlapping)
{
    const auto N = v.cols();
    detail::require_rows(static_cast<std::size_t>(v.rows()), static_cast<std::size_t>(N + 3), "HAR-KS");
    const auto d = detail::design(v, mode);
    const auto rows = static_cast<Eigen::Index>(d.feats.size());
    auto c = detail::blank(HarVariant::HARKS, mode, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        Matrix X(rows, N + 3);
        for (Eigen::Index r = 0; r < rows; ++r) {
            const auto& f = d.feats[static_cast<std::size_t>(r)];
            X(r, 0) = 1.0;
            X(r, 1) = f[0](i);
            X(r, 2) = f[1](i);
            X(r, 3) = f[2](i);
            Eigen::Index col = 4;
            for (Eigen::Index k = 0; k < N; ++k)
                if (k != i) X(r, col++) = f[0](k);
        }
        const auto r = ols(X, d.target.col(i), "HAR-KS");
        c.alpha(i) = r.coef(0);
        c.se_alpha(i) = r.stderr_(0);
        c.beta_d(i, i) = r.coef(1);
        c.beta_w(i, i) = r.coef(2);
        c.beta_m(i, i) = r.coef(3);
        c.se_d(i, i) = r.stderr_(1);
        c.se_w(i, i) = r.stderr_(2);
        c.se_m(i, i) = r.stderr_(3);
        Eigen::Index col = 4;
        for (Eigen::Index k = 0; k < N; ++k)
            if (k != i) {
                c.beta_d(i, k) = r.coef(col);
                c.se_d(i, k) = r.stderr_(col);
                ++col;
            }
    }
    return c;
}

/// D^{-1/2} A_sym D^{-1/2} with A_sym = (A + A') / 2.
inline Matrix normalized_graph(const Matrix& adjacency)
{
    const Matrix sym = 0.5 * (adjacency + adjacency.transpose());
    const Vector deg = sym.rowwise().sum();
    for (Eigen::Index i = 0; i < deg.size(); ++i)
        if (!(deg(i) > 0.0)) throw DataError("zero-degree node " + std::to_string(i) + " in HAR graph");
    const Vector s = deg.cwiseSqrt().cwiseInverse();
    return s.asDiagonal() * sym * s.asDiagonal();
}

namespace detail {

/// Pooled rows of the graph HAR: one row per (t, n) with N intercept dummies
/// followed by own (d, w, m) and, optionally, neighbourhood (d, w, m).
inline void pooled_design(const Design& d, const Matrix* anorm, Matrix& X, Vector& y)
{
    const auto N = d.target.cols();
    const auto T = static_cast<Eigen::Index>(d.feats.size());
    const Eigen::Index k = N + (anorm ? 6 : 3);
    X = Matrix::Zero(T * N, k);
    y.resize(T * N);
    for (Eigen::Index r = 0; r < T; ++r) {
        const auto& f = d.feats[static_cast<std::size_t>(r)];
        std::array<Vector, 3> g;
        if (anorm)
            for (int b = 0; b < 3; ++b) g[b] = *anorm * f[b];
        for (Eigen::Index n = 0; n < N; ++n) {
            const Eigen::Index row = r * N + n;
            X(row, n) = 1.0;
            for (int b = 0; b < 3; ++b) {
                X(row, N + b) = f[b](n);
                if (anorm) X(row, N + 3 + b) = g[b](n);
            }
            y(row) = d.target(r, n);
        }
    }
}

} // namespace detail

/// GHAR on a complete panel with a given adjacency (non-overlapping windows).
inline HARCoefficients fit_ghar(const Matrix& v, const Matrix& adjacency)
{
    const auto N = v.cols();
    if (adjacency.rows() != N || adjacency.cols() != N) throw DataError("adjacency shape mismatch");
    detail::require_rows(static_cast<std::size_t>(v.rows()), 6, "GHAR");
    const Matrix an = normalized_graph(adjacency);
    const auto d = detail::design(v, WindowMode::NonOverlapping);
    Matrix X;
    Vector y;
    detail::pooled_design(d, &an, X, y);
    const auto r = ols(X, y, "GHAR");
    auto c = detail::blank(HarVariant::GHAR, WindowMode::NonOverlapping, N);
    c.alpha = r.coef.head(N);
    c.se_alpha = r.stderr_.head(N);
    c.pooled.assign(r.coef.data() + N, r.coef.data() + N + 6);
    c.pooled_se.assign(r.stderr_.data() + N, r.stderr_.data() + N + 6);
    const Matrix I = Matrix::Identity(N, N);
    c.beta_d = c.pooled[0] * I + c.pooled[3] * an;
    c.beta_w = c.pooled[1] * I + c.pooled[4] * an;
    c.beta_m = c.pooled[2] * I + c.pooled[5] * an;
    return c;
}

/// Pooled non-overlapping HAR (GHAR without neighbourhood terms).
inline HARCoefficients fit_pooled_har(const Matrix& v)
{
    const auto N = v.cols();
    detail::require_rows(static_cast<std::size_t>(v.rows()), 3, "pooled HAR");
    const auto d = detail::design(v, WindowMode::NonOverlapping);
    Matrix X;
    Vector y;
    detail::pooled_design(d, nullptr, X, y);
    const auto r = ols(X, y, "pooled HAR");
    auto c = detail::blank(HarVariant::GHAR, WindowMode::NonOverlapping, N);
    c.alpha = r.coef.head(N);
    c.pooled = {r.coef(N), r.coef(N + 1), r.coef(N + 2), 0.0, 0.0, 0.0};
    const Matrix I = Matrix::Identity(N, N);
    c.beta_d = c.pooled[0] * I;
    c.beta_w = c.pooled[1] * I;
    c.beta_m = c.pooled[2] * I;
    return c;
}

struct GnnHarOptions {
    std::size_t layers = 1;
    std::size_t epochs = 200;
    double step_size = 1e-2;
    std::uint64_t seed = 0;
};

/// Flat parameter vector layout for GNNHAR:
/// [alpha (N), beta (3), Theta_0 .. Theta_{L-1} (9 each, row-major), gamma (3)].
struct GnnHarProblem {
    Matrix adjacency_norm;
    std::vector<Matrix> H0; ///< per sample, N x 3
    Matrix target;          ///< samples x N
    std::size_t layers = 1;

    Eigen::Index n_params() const
    {
        return adjacency_norm.rows() + 3 + 9 * static_cast<Eigen::Index>(layers) + 3;
    }

    /// Mean squared error and its exact gradient.
    double loss_and_grad(const Vector& params, Vector* grad) const
    {
        const auto N = adjacency_norm.rows();
        const auto L = static_cast<Eigen::Index>(layers);
        const Vector alpha = params.head(N);
        const Vector beta = params.segment(N, 3);
        std::vector<Matrix> th(layers);
        for (Eigen::Index l = 0; l < L; ++l)
            th[static_cast<std::size_t>(l)] =
                Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(params.data() + N + 3 + 9 * l);
        const Vector gamma = params.segment(N + 3 + 9 * L, 3);

        if (grad) *grad = Vector::Zero(params.size());
        double loss = 0.0;
        const double scale = 1.0 / static_cast<double>(H0.size() * static_cast<std::size_t>(N));
        std::vector<Matrix> H(layers + 1), Z(layers);
        for (std::size_t s = 0; s < H0.size(); ++s) {
            H[0] = H0[s];
            for (std::size_t l = 0; l < layers; ++l) {
                Z[l] = adjacency_norm * H[l] * th[l];
                H[l + 1] = Z[l].cwiseMax(0.0);
            }
            const Vector out = alpha + H[0] * beta + H[layers] * gamma;
            const Vector resid = out - target.row(static_cast<Eigen::Index>(s)).transpose();
            loss += resid.squaredNorm() * scale;
            if (!grad) continue;
            const Vector dout = 2.0 * scale * resid;
            grad->head(N) += dout;
            grad->segment(N, 3) += H[0].transpose() * dout;
            grad->segment(N + 3 + 9 * L, 3) += H[layers].transpose() * dout;
            Matrix dH = dout * gamma.transpose(); // N x 3
            for (std::size_t l = layers; l-- > 0;) {
                const Matrix dZ = dH.cwiseProduct((Z[l].array() > 0.0).cast<double>().matrix());
                const Matrix AH = adjacency_norm * H[l];
                const Matrix dTh = AH.transpose() * dZ;
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b)
                        (*grad)(N + 3 + 9 * static_cast<Eigen::Index>(l) + a * 3 + b) += dTh(a, b);
                dH = adjacency_norm.transpose() * dZ * th[l].transpose();
            }
        }
        return loss;
    }
};

inline GnnHarProblem gnnhar_problem(const Matrix& v, const Matrix& adjacency, std::size_t layers)
{
    if (layers == 0) throw ConfigError("GNNHAR needs at least one layer");
    GnnHarProblem p;
    p.adjacency_norm = normalized_graph(adjacency);
    p.layers = layers;
    const auto d = detail::design(v, WindowMode::NonOverlapping);
    p.target = d.target;
    for (const auto& f : d.feats) {
        Matrix h(v.cols(), 3);
        h << f[0], f[1], f[2];
        p.H0.push_back(std::move(h));
    }
    return p;
}

inline HARCoefficients gnnhar_from_params(const GnnHarProblem& p, const Vector& params)
{
    const auto N = p.adjacency_norm.rows();
    const auto L = static_cast<Eigen::Index>(p.layers);
    auto c = detail::blank(HarVariant::GNNHAR, WindowMode::NonOverlapping, N);
    c.alpha = params.head(N);
    c.pooled = {params(N), params(N + 1), params(N + 2)};
    const Matrix I = Matrix::Identity(N, N);
    c.beta_d = params(N) * I;
    c.beta_w = params(N + 1) * I;
    c.beta_m = params(N + 2) * I;
    GnnTerm g;
    g.adjacency_norm = p.adjacency_norm;
    for (Eigen::Index l = 0; l < L; ++l)
        g.theta.push_back(Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(params.data() + N + 3 + 9 * l));
    g.gamma = params.segment(N + 3 + 9 * L, 3);
    c.pooled.insert(c.pooled.end(), g.gamma.data(), g.gamma.data() + 3);
    c.gnn = std::move(g);
    return c;
}

struct GnnHarFit {
    HARCoefficients coefs;
    std::vector<double> loss_history;
};

/// Full-batch gradient descent on the mean squared error. The linear part is
/// initialised from pooled HAR least squares, graph weights uniformly in
/// [-1/sqrt(3), 1/sqrt(3)] and gamma at zero.
inline GnnHarFit fit_gnnhar(const Matrix& v, const Matrix& adjacency, const GnnHarOptions& opt)
{
    detail::require_rows(static_cast<std::size_t>(v.rows()), 6, "GNNHAR");
    const auto p = gnnhar_problem(v, adjacency, opt.layers);
    const auto N = v.cols();
    const auto init = fit_pooled_har(v);
    Vector params = Vector::Zero(p.n_params());
    params.head(N) = init.alpha;
    params.segment(N, 3) << init.pooled[0], init.pooled[1], init.pooled[2];
    CounterRng rng(opt.seed, 0x6E6E686172ULL);
    const double s = 1.0 / std::sqrt(3.0);
    for (Eigen::Index i = N + 3; i < N + 3 + 9 * static_cast<Eigen::Index>(opt.layers); ++i) params(i) = rng.uniform(-s, s);

    GnnHarFit fit;
    Vector grad;
    double last_finite = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t e = 0; e < opt.epochs; ++e) {
        const double loss = p.loss_and_grad(params, &grad);
        if (!std::isfinite(loss) || !grad.allFinite())
            throw NumericError("GNNHAR diverged at epoch " + std::to_string(e) + "; last finite loss " +
                               format_double(last_finite));
        last_finite = loss;
        fit.loss_history.push_back(loss);
        params -= opt.step_size * grad;
    }
    fit.coefs = gnnhar_from_params(p, params);
    return fit;
}

inline nlohmann::json to_json(const HARCoefficients& c, const std::vector<std::string>& indices)
{
    auto mat = [](const Matrix& m) {
        nlohmann::json a = nlohmann::json::array();
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            nlohmann::json r = nlohmann::json::array();
            for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
            a.push_back(std::move(r));
        }
        return a;
    };
    nlohmann::json per_index = nlohmann::json::object();
    for (std::size_t n = 0; n < indices.size(); ++n) {
        const auto i = static_cast<Eigen::Index>(n);
        per_index[indices[n]] = {{"alpha", c.alpha(i)},
                                 {"beta_d", c.beta_d(i, i)},
                                 {"beta_w", c.beta_w(i, i)},
                                 {"beta_m", c.beta_m(i, i)}};
    }
    nlohmann::json j = {{"variant", to_string(c.variant)},
                        {"windows", c.mode == WindowMode::Overlapping ? "overlapping" : "non-overlapping"},
                        {"indices", indices},
                        {"per_index", per_index},
                        {"beta_d", mat(c.beta_d)},
                        {"beta_w", mat(c.beta_w)},
                        {"beta_m", mat(c.beta_m)}};
    if (!c.pooled.empty()) j["pooled"] = c.pooled;
    if (c.gnn) {
        nlohmann::json th = nlohmann::json::array();
        for (const auto& t : c.gnn->theta) th.push_back(mat(t));
        j["gnn"] = {{"theta", th}, {"gamma", std::vector<double>(c.gnn->gamma.data(), c.gnn->gamma.data() + 3)}};
    }
    return j;
}

} // namespace volnet
