#pragma once

/// @file
/// Synthetic panels with known structure.

#include "volnet/core.hpp"
#include "volnet/har.hpp"
#include "volnet/panel.hpp"
#include "volnet/rng.hpp"
#include "volnet/spillover.hpp"

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace volnet {

/// Runs v_t = forecast_har(c, v_{..t-1}) + noise_sd * z_t forward from the
/// 22 x N `init` block. Returns init followed by `steps` generated rows.
inline Matrix simulate_har(const HARCoefficients& c, const Matrix& init, std::size_t steps, double noise_sd,
                           CounterRng& rng)
{
    if (init.rows() < static_cast<Eigen::Index>(kHarLookback)) throw ConfigError("HAR simulation needs 22 initial rows");
    const auto N = init.cols();
    const auto start = init.rows();
    Matrix v(start + static_cast<Eigen::Index>(steps), N);
    v.topRows(start) = init;
    for (Eigen::Index t = start; t < v.rows(); ++t) {
        Vector next = forecast_har(c, v.topRows(t));
        if (noise_sd > 0.0)
            for (Eigen::Index n = 0; n < N; ++n) next(n) += noise_sd * rng.normal();
        v.row(t) = next.transpose();
    }
    return v;
}

enum class Positivity { Absolute, Exponential };

/// A VAR level process x_t = mean + sum_k Phi_k (x_{t-k} - mean) + e_t,
/// e_t ~ N(0, sigma), mapped to a positive RV^{1/2} series. When
/// `alt_phi` is set the coefficients alternate between `phi` and `alt_phi`
/// every `regime_length` rows.
struct SynthSpec {
    std::size_t n = 0;
    std::size_t t = 0;
    std::vector<Matrix> phi;
    Matrix sigma;
    Positivity transform = Positivity::Absolute;
    double scale = 0.01;
    double mean = 0.0;
    std::vector<double> holidays; ///< per index, empty means none
    std::uint64_t seed = 0;
    std::size_t burn_in = 500;
    std::vector<Matrix> alt_phi;
    std::size_t regime_length = 0;

    void validate() const
    {
        if (n == 0 || t == 0) throw ConfigError("synthetic panel needs n > 0 and t > 0");
        if (phi.empty()) throw ConfigError("at least one VAR lag is required");
        const auto N = static_cast<Eigen::Index>(n);
        auto check_lags = [&](const std::vector<Matrix>& lags) {
            for (const auto& m : lags)
                if (m.rows() != N || m.cols() != N) throw ConfigError("VAR coefficient shape does not match n");
            if (companion_spectral_radius(lags) >= 1.0) throw ConfigError("unstable VAR coefficients");
        };
        check_lags(phi);
        if (!alt_phi.empty()) {
            if (alt_phi.size() != phi.size()) throw ConfigError("alternate regime must have the same lag order");
            if (regime_length == 0) throw ConfigError("regime_length must be positive with an alternate regime");
            check_lags(alt_phi);
        }
        if (sigma.rows() != N || sigma.cols() != N) throw ConfigError("innovation covariance shape does not match n");
        if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw ConfigError("innovation covariance not symmetric");
        if (Eigen::LLT<Matrix>(sigma).info() != Eigen::Success)
            throw ConfigError("innovation covariance not positive definite");
        if (!holidays.empty() && holidays.size() != n) throw ConfigError("holiday vector length must equal n");
        for (double p : holidays)
            if (!(p >= 0.0 && p <= 0.3)) throw ConfigError("holiday probabilities must lie in [0, 0.3]");
        if (!(scale > 0.0)) throw ConfigError("scale must be positive");
    }
};

namespace detail {

inline Matrix json_matrix(const nlohmann::json& j, const char* what)
{
    if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + " must be a non-empty array of rows");
    const auto R = static_cast<Eigen::Index>(j.size());
    const auto C = static_cast<Eigen::Index>(j.front().size());
    Matrix m(R, C);
    for (Eigen::Index r = 0; r < R; ++r) {
        const auto& row = j.at(static_cast<std::size_t>(r));
        if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != C) throw ConfigError(std::string(what) + " is ragged");
        for (Eigen::Index c = 0; c < C; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    return m;
}

inline nlohmann::json matrix_json(const Matrix& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

/// Accepts a single matrix (one lag) or an array of matrices.
inline std::vector<Matrix> json_lags(const nlohmann::json& j, const char* what)
{
    if (!j.is_array() || j.empty()) throw ConfigError(std::string(what) + " must be a non-empty array");
    if (j.front().is_array() && !j.front().empty() && j.front().front().is_array()) {
        std::vector<Matrix> out;
        for (const auto& m : j) out.push_back(json_matrix(m, what));
        return out;
    }
    return {json_matrix(j, what)};
}

} // namespace detail

inline SynthSpec synth_spec_from_json(const nlohmann::json& j)
{
    try {
        SynthSpec s;
        s.n = j.at("n").get<std::size_t>();
        s.t = j.at("t").get<std::size_t>();
        s.phi = detail::json_lags(j.at("phi"), "phi");
        s.sigma = j.contains("sigma") ? detail::json_matrix(j.at("sigma"), "sigma")
                                      : Matrix::Identity(static_cast<Eigen::Index>(s.n), static_cast<Eigen::Index>(s.n));
        const std::string tr = j.value("transform", std::string("abs"));
        if (tr == "abs") s.transform = Positivity::Absolute;
        else if (tr == "exp") s.transform = Positivity::Exponential;
        else throw ConfigError("transform must be abs or exp");
        s.scale = j.value("scale", 0.01);
        s.mean = j.value("mean", 0.0);
        if (j.contains("holidays")) s.holidays = j.at("holidays").get<std::vector<double>>();
        s.seed = j.value("seed", std::uint64_t{0});
        s.burn_in = j.value("burn_in", std::size_t{500});
        if (j.contains("alt_phi")) s.alt_phi = detail::json_lags(j.at("alt_phi"), "alt_phi");
        s.regime_length = j.value("regime_length", std::size_t{0});
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
    }
}

inline nlohmann::json to_json(const SynthSpec& s)
{
    auto lags = [](const std::vector<Matrix>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& m : v) a.push_back(detail::matrix_json(m));
        return a;
    };
    nlohmann::json j = {{"n", s.n},
                        {"t", s.t},
                        {"phi", lags(s.phi)},
                        {"sigma", detail::matrix_json(s.sigma)},
                        {"transform", s.transform == Positivity::Absolute ? "abs" : "exp"},
                        {"scale", s.scale},
                        {"mean", s.mean},
                        {"holidays", s.holidays},
                        {"seed", s.seed},
                        {"burn_in", s.burn_in}};
    if (!s.alt_phi.empty()) {
        j["alt_phi"] = lags(s.alt_phi);
        j["regime_length"] = s.regime_length;
    }
    return j;
}

/// Weekday calendar starting on a Monday.
inline std::vector<Date> business_days(std::size_t count, Date start = Date{std::chrono::year{2000}, std::chrono::January, std::chrono::day{3}})
{
    std::vector<Date> out;
    out.reserve(count);
    std::chrono::sys_days d{start};
    while (out.size() < count) {
        const std::chrono::weekday wd{d};
        if (wd != std::chrono::Saturday && wd != std::chrono::Sunday) out.emplace_back(d);
        d += std::chrono::days{1};
    }
    return out;
}

inline std::vector<std::string> synthetic_index_names(std::size_t n)
{
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("IDX" + std::to_string(i + 1));
    return names;
}

/// Simulated levels before the positivity transform, T x N.
inline Matrix simulate_var_levels(const SynthSpec& spec)
{
    spec.validate();
    const auto N = static_cast<Eigen::Index>(spec.n);
    const std::size_t p = spec.phi.size();
    const Matrix chol = Eigen::LLT<Matrix>(spec.sigma).matrixL();
    CounterRng rng(spec.seed, 0x73796E7468ULL);
    const std::size_t total = spec.burn_in + spec.t;
    Matrix dev = Matrix::Zero(static_cast<Eigen::Index>(total + p), N);
    Vector z(N);
    for (std::size_t k = 0; k < total; ++k) {
        const auto r = static_cast<Eigen::Index>(k + p);
        const bool alt = !spec.alt_phi.empty() && k >= spec.burn_in &&
                         ((k - spec.burn_in) / spec.regime_length) % 2 == 1;
        const auto& lags = alt ? spec.alt_phi : spec.phi;
        Vector x = Vector::Zero(N);
        for (std::size_t l = 0; l < p; ++l) x += lags[l] * dev.row(r - 1 - static_cast<Eigen::Index>(l)).transpose();
        for (Eigen::Index n = 0; n < N; ++n) z(n) = rng.normal();
        dev.row(r) = (x + chol * z).transpose();
    }
    Matrix out = dev.bottomRows(static_cast<Eigen::Index>(spec.t));
    out.array() += spec.mean;
    return out;
}

inline Matrix apply_positivity(const Matrix& levels, Positivity tr, double scale)
{
    if (tr == Positivity::Absolute) return (scale * levels.array().abs() + 1e-6).matrix();
    return (scale * levels.array().exp()).matrix();
}

/// Fully observed panel on a weekday calendar.
inline RVPanel gen_var_panel(const SynthSpec& spec)
{
    const Matrix v = apply_positivity(simulate_var_levels(spec), spec.transform, spec.scale);
    return RVPanel(business_days(spec.t), synthetic_index_names(spec.n), v,
                   Mask::Constant(v.rows(), v.cols(), true));
}

/// Marks each cell inactive with its index's probability, then drops rows
/// with no active market.
inline RVPanel apply_holidays(const RVPanel& panel, const std::vector<double>& probabilities, std::uint64_t seed)
{
    if (probabilities.size() != panel.cols()) throw ConfigError("holiday vector length must equal the number of indices");
    for (double p : probabilities)
        if (!(p >= 0.0 && p <= 0.3)) throw ConfigError("holiday probabilities must lie in [0, 0.3]");
    CounterRng rng(seed, 0x686F6C69ULL);
    Mask obs = panel.observed();
    for (Eigen::Index t = 0; t < obs.rows(); ++t)
        for (Eigen::Index n = 0; n < obs.cols(); ++n)
            if (rng.bernoulli(probabilities[static_cast<std::size_t>(n)])) obs(t, n) = false;
    std::vector<Eigen::Index> keep;
    for (Eigen::Index t = 0; t < obs.rows(); ++t)
        if (obs.row(t).any()) keep.push_back(t);
    const auto K = static_cast<Eigen::Index>(keep.size());
    std::vector<Date> dates;
    Matrix v(K, obs.cols());
    Mask o(K, obs.cols());
    for (Eigen::Index r = 0; r < K; ++r) {
        const auto t = keep[static_cast<std::size_t>(r)];
        dates.push_back(panel.dates()[static_cast<std::size_t>(t)]);
        o.row(r) = obs.row(t);
        for (Eigen::Index n = 0; n < obs.cols(); ++n) v(r, n) = obs(t, n) ? panel.values()(t, n) : 0.0;
    }
    return RVPanel(std::move(dates), panel.indices(), std::move(v), std::move(o));
}

inline RVPanel generate_panel(const SynthSpec& spec)
{
    RVPanel p = gen_var_panel(spec);
    if (spec.holidays.empty()) return p;
    return apply_holidays(p, spec.holidays, spec.seed ^ 0x9E3779B97F4A7C15ULL);
}

/// Block-diagonal VAR(1): `own` on the diagonal, `cross` between distinct
/// members of the same block.
inline Matrix block_phi(const std::vector<int>& blocks, double own, double cross)
{
    const auto N = static_cast<Eigen::Index>(blocks.size());
    Matrix phi = Matrix::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j)
            phi(i, j) = i == j ? own : (blocks[static_cast<std::size_t>(i)] == blocks[static_cast<std::size_t>(j)] ? cross : 0.0);
    return phi;
}

/// Fraction of the top-|planted| estimated off-diagonal edges that join two
/// members of the same block. `blocks` labels each index.
inline double edge_overlap_score(const SpilloverGraph& g, const std::vector<int>& blocks)
{
    const auto N = g.theta.rows();
    if (static_cast<std::size_t>(N) != blocks.size()) throw ConfigError("block labels must cover every index");
    struct Edge {
        double w;
        Eigen::Index i, j;
    };
    std::vector<Edge> edges;
    std::size_t planted = 0;
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) {
            if (i == j) continue;
            edges.push_back({g.theta(i, j), i, j});
            if (blocks[static_cast<std::size_t>(i)] == blocks[static_cast<std::size_t>(j)]) ++planted;
        }
    if (planted == 0) throw ConfigError("no planted edges");
    std::stable_sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) { return a.w > b.w; });
    std::size_t hit = 0;
    for (std::size_t k = 0; k < planted; ++k)
        if (blocks[static_cast<std::size_t>(edges[k].i)] == blocks[static_cast<std::size_t>(edges[k].j)]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(planted);
}

/// Generates a panel from `spec` and scores the estimated graph against the
/// planted blocks.
inline double planted_graph_recovery(const SynthSpec& spec, const std::vector<int>& blocks, const SpilloverSettings& s)
{
    const RVPanel p = gen_var_panel(spec);
    return edge_overlap_score(estimate_graph(p.values(), s), blocks);
}

/// Eight-index panel whose block structure flips between {0..3 | 4..7} and
/// {even | odd} every `regime_length` days, with per-index holiday rates
/// drawn from [0.03, 0.06].
inline SynthSpec regime_switching_spec(std::size_t t, std::uint64_t seed, std::size_t regime_length = 250)
{
    SynthSpec s;
    s.n = 8;
    s.t = t;
    s.phi = {block_phi({0, 0, 0, 0, 1, 1, 1, 1}, 0.45, 0.15)};
    s.alt_phi = {block_phi({0, 1, 0, 1, 0, 1, 0, 1}, 0.45, 0.15)};
    s.regime_length = regime_length;
    s.sigma = Matrix::Identity(8, 8);
    s.mean = 4.0;
    s.scale = 0.01;
    s.seed = seed;
    CounterRng rng(seed, 0x686F6C72ULL);
    for (int i = 0; i < 8; ++i) s.holidays.push_back(rng.uniform(0.03, 0.06));
    return s;
}

} // namespace volnet
