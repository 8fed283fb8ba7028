#pragma once

/// @file
/// Forecast evaluation: iterated forecasts, MAFE, Diebold-Mariano and model
/// confidence set comparisons, plus descriptive statistics and the ADF test.

#include "volnet/core.hpp"
#include "volnet/ols.hpp"
#include "volnet/panel.hpp"
#include "volnet/rng.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <numeric>
#include <string>
#include <vector>

namespace volnet {

/// A model that maps a look-back block to the next h rows, on the RV^{1/2} scale.
class Forecaster {
public:
    virtual ~Forecaster() = default;

    /// `lookback` is l x N with zeros at inactive cells; `future_observed`
    /// is the known h x N trading calendar ahead. Returns h x N.
    virtual Matrix forecast(const Matrix& lookback, const Mask& lookback_observed, const Mask& future_observed) const = 0;
};

/// Horizon-h forecasts aligned to their target dates.
struct IteratedSeries {
    std::vector<Date> dates;
    Matrix forecast;
    Matrix truth;
    Mask active;
};

/// Rolling iterated forecast over panel rows [first, last). The first origin
/// sees real data only; after each origin o the one-step forecast replaces
/// row o's observed cells in the working copy, so later look-backs are built
/// from the model's own output. The forecast recorded at origin o targets row
/// o + h - 1.
inline IteratedSeries iterated_forecast(const Forecaster& model, const RVPanel& panel, std::size_t first,
                                        std::size_t last, std::size_t l, std::size_t h)
{
    if (l == 0 || h == 0) throw ConfigError("look-back and horizon must be positive");
    if (last > panel.rows() || first > last || last - first < l + h) throw DataError("segment too short");
    const auto N = static_cast<Eigen::Index>(panel.cols());
    const auto L = static_cast<Eigen::Index>(l);
    const auto Hh = static_cast<Eigen::Index>(h);
    Matrix work = panel.values();
    for (Eigen::Index t = 0; t < work.rows(); ++t)
        for (Eigen::Index n = 0; n < N; ++n)
            if (!panel.observed()(t, n)) work(t, n) = 0.0;

    const std::size_t count = last - first - l - h + 1;
    IteratedSeries out;
    out.forecast.resize(static_cast<Eigen::Index>(count), N);
    out.truth.resize(static_cast<Eigen::Index>(count), N);
    out.active.resize(static_cast<Eigen::Index>(count), N);
    for (std::size_t k = 0; k < count; ++k) {
        const auto o = static_cast<Eigen::Index>(first + l + k);
        const Matrix f = model.forecast(work.middleRows(o - L, L), panel.observed().middleRows(o - L, L),
                                        panel.observed().middleRows(o, Hh));
        if (f.rows() != Hh || f.cols() != N) throw DataError("forecaster returned the wrong shape");
        const auto target = o + Hh - 1;
        const auto r = static_cast<Eigen::Index>(k);
        out.dates.push_back(panel.dates()[static_cast<std::size_t>(target)]);
        out.forecast.row(r) = f.row(Hh - 1);
        out.active.row(r) = panel.observed().row(target);
        for (Eigen::Index n = 0; n < N; ++n)
            out.truth(r, n) = panel.observed()(target, n) ? panel.values()(target, n) : 0.0;
        for (Eigen::Index n = 0; n < N; ++n)
            if (panel.observed()(o, n)) work(o, n) = f(0, n);
    }
    return out;
}

/// Restricts several series to the dates present in all of them.
inline std::vector<IteratedSeries> align_common_dates(const std::vector<IteratedSeries>& series)
{
    if (series.empty()) return {};
    std::vector<Date> common = series.front().dates;
    for (const auto& s : series) {
        std::vector<Date> next;
        std::set_intersection(common.begin(), common.end(), s.dates.begin(), s.dates.end(), std::back_inserter(next));
        common = std::move(next);
    }
    std::vector<IteratedSeries> out;
    for (const auto& s : series) {
        IteratedSeries a;
        const auto N = s.forecast.cols();
        a.dates = common;
        a.forecast.resize(static_cast<Eigen::Index>(common.size()), N);
        a.truth.resize(static_cast<Eigen::Index>(common.size()), N);
        a.active.resize(static_cast<Eigen::Index>(common.size()), N);
        std::size_t j = 0;
        for (std::size_t i = 0; i < s.dates.size() && j < common.size(); ++i) {
            if (s.dates[i] != common[j]) continue;
            const auto r = static_cast<Eigen::Index>(j++);
            a.forecast.row(r) = s.forecast.row(static_cast<Eigen::Index>(i));
            a.truth.row(r) = s.truth.row(static_cast<Eigen::Index>(i));
            a.active.row(r) = s.active.row(static_cast<Eigen::Index>(i));
        }
        out.push_back(std::move(a));
    }
    return out;
}

/// Mean absolute forecast error over active positions.
inline double mafe(std::span<const double> forecast, std::span<const double> truth, std::span<const bool> active)
{
    if (forecast.size() != truth.size() || active.size() != truth.size()) throw DataError("series length mismatch");
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < truth.size(); ++i)
        if (active[i]) {
            sum += std::abs(forecast[i] - truth[i]);
            ++n;
        }
    if (n == 0) throw DataError("no active positions");
    return sum / static_cast<double>(n);
}

/// Per-index MAFE of an iterated series.
inline Vector mafe(const IteratedSeries& s)
{
    const auto N = s.forecast.cols();
    Vector out(N);
    for (Eigen::Index n = 0; n < N; ++n) {
        const Vector f = s.forecast.col(n), t = s.truth.col(n);
        const Eigen::Matrix<bool, Eigen::Dynamic, 1> a = s.active.col(n);
        out(n) = mafe(std::span(f.data(), static_cast<std::size_t>(f.size())),
                      std::span(t.data(), static_cast<std::size_t>(t.size())),
                      std::span(a.data(), static_cast<std::size_t>(a.size())));
    }
    return out;
}

struct DMResult {
    double statistic = 0.0;      ///< small-sample adjusted
    double p_value = 0.0;        ///< one-sided, alternative: model 1 more accurate
    double p_value_two_sided = 0.0;
    double mean_differential = 0.0;
    double long_run_variance = 0.0; ///< variance of the mean differential
    std::size_t horizon = 1;
    bool small_sample_adjusted = true;
};

/// Diebold-Mariano on a loss differential d_t, uniform weights to lag h-1,
/// small-sample corrected, reference t distribution with T-1 degrees of freedom.
inline DMResult dm_test_differential(std::span<const double> d, std::size_t h)
{
    const std::size_t T = d.size();
    if (T < 10) throw DataError("DM test needs at least 10 observations");
    if (h < 1 || h >= T) throw ConfigError("DM horizon out of range");
    if (std::all_of(d.begin(), d.end(), [&](double v) { return v == d[0]; }))
        throw NumericError("degenerate DM test: constant loss differential");
    const double Td = static_cast<double>(T);
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / Td;
    auto autocov = [&](std::size_t k) {
        double s = 0.0;
        for (std::size_t t = k; t < T; ++t) s += (d[t] - mean) * (d[t - k] - mean);
        return s / Td;
    };
    double lrv = autocov(0);
    for (std::size_t k = 1; k < h; ++k) lrv += 2.0 * autocov(k);
    lrv /= Td;
    if (!(lrv > 0.0)) throw NumericError("degenerate DM test: loss differential has no variance");
    const double hd = static_cast<double>(h);
    const double adj = std::sqrt((Td + 1.0 - 2.0 * hd + hd * (hd - 1.0) / Td) / Td);
    DMResult r;
    r.mean_differential = mean;
    r.long_run_variance = lrv;
    r.horizon = h;
    r.statistic = adj * mean / std::sqrt(lrv);
    const boost::math::students_t dist(Td - 1.0);
    r.p_value = boost::math::cdf(boost::math::complement(dist, r.statistic));
    r.p_value_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
    return r;
}

/// d_t = |e0_t| - |e1_t|; a positive statistic favours model 1.
inline DMResult dm_test(std::span<const double> e0, std::span<const double> e1, std::size_t h)
{
    if (e0.size() != e1.size()) throw DataError("DM error series length mismatch");
    std::vector<double> d(e0.size());
    for (std::size_t t = 0; t < d.size(); ++t) d[t] = std::abs(e0[t]) - std::abs(e1[t]);
    return dm_test_differential(d, h);
}

inline nlohmann::json to_json(const DMResult& r)
{
    return {{"statistic", r.statistic},
            {"p_value", r.p_value},
            {"p_value_two_sided", r.p_value_two_sided},
            {"mean_differential", r.mean_differential},
            {"long_run_variance", r.long_run_variance},
            {"horizon", r.horizon},
            {"small_sample_adjusted", r.small_sample_adjusted}};
}

struct MCSResult {
    std::vector<std::string> models;
    std::vector<double> p_values;       ///< per model, in input order
    std::vector<std::size_t> eliminated; ///< elimination order
    std::vector<std::string> surviving;
    double alpha = 0.1;
    std::size_t replications = 0;
    std::size_t block_length = 0;

    bool survives(std::size_t m) const { return p_values[m] >= alpha; }
};

struct MCSOptions {
    double alpha = 0.1; ///< models with MCS p-value below alpha are excluded
    std::size_t replications = 1000;
    std::size_t block_length = 0; ///< 0 selects ceil(T^{1/3})
    std::uint64_t seed = 0;
};

/// Model confidence set with the range statistic and a moving-block
/// bootstrap. Elimination runs to a single model; the reported set is every
/// model whose MCS p-value is at least alpha.
inline MCSResult mcs_test(const Matrix& losses, const std::vector<std::string>& names, const MCSOptions& opt = {})
{
    const auto T = losses.rows();
    const auto M = losses.cols();
    if (M < 2) throw DataError("MCS needs at least two models");
    if (T < 30) throw DataError("MCS needs at least 30 observations");
    if (static_cast<Eigen::Index>(names.size()) != M) throw DataError("model name count mismatch");
    if (!losses.allFinite()) throw DataError("non-finite loss");
    if (opt.replications < 1) throw ConfigError("MCS needs at least one replication");
    const std::size_t b = opt.block_length
                              ? opt.block_length
                              : static_cast<std::size_t>(std::ceil(std::cbrt(static_cast<double>(T)) - 1e-12));
    if (b < 1 || b > static_cast<std::size_t>(T)) throw ConfigError("invalid block length");

    const Vector mean = losses.colwise().mean().transpose();
    // bootstrap means, replications x M
    Matrix boot(static_cast<Eigen::Index>(opt.replications), M);
    CounterRng rng(opt.seed, 0x6D6373ULL);
    const std::size_t n_blocks = (static_cast<std::size_t>(T) + b - 1) / b;
    const std::uint64_t starts = static_cast<std::uint64_t>(T) - b + 1;
    for (std::size_t r = 0; r < opt.replications; ++r) {
        CounterRng rr = rng.substream(r);
        RowVector acc = RowVector::Zero(M);
        std::size_t taken = 0;
        for (std::size_t k = 0; k < n_blocks && taken < static_cast<std::size_t>(T); ++k) {
            const auto s = static_cast<Eigen::Index>(rr.below(starts));
            for (std::size_t j = 0; j < b && taken < static_cast<std::size_t>(T); ++j, ++taken)
                acc += losses.row(s + static_cast<Eigen::Index>(j));
        }
        boot.row(static_cast<Eigen::Index>(r)) = acc / static_cast<double>(T);
    }

    MCSResult res;
    res.models = names;
    res.alpha = opt.alpha;
    res.replications = opt.replications;
    res.block_length = b;
    res.p_values.assign(static_cast<std::size_t>(M), 1.0);
    std::vector<Eigen::Index> alive(static_cast<std::size_t>(M));
    std::iota(alive.begin(), alive.end(), Eigen::Index{0});
    double running = 0.0;
    const double R = static_cast<double>(opt.replications);
    while (alive.size() > 1) {
        const std::size_t m = alive.size();
        // pairwise statistics
        Matrix t(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        Matrix sd(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
        double stat = 0.0;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < m; ++j) {
                const auto a = alive[i], c = alive[j];
                const double dbar = mean(a) - mean(c);
                double v = 0.0;
                for (Eigen::Index r = 0; r < boot.rows(); ++r) {
                    const double e = (boot(r, a) - boot(r, c)) - dbar;
                    v += e * e;
                }
                const double s = std::sqrt(v / R);
                sd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s;
                double tij;
                if (s > 0.0) tij = dbar / s;
                else tij = dbar == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), dbar);
                t(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = tij;
                stat = std::max(stat, std::abs(tij));
            }
        std::size_t exceed = 0;
        for (Eigen::Index r = 0; r < boot.rows(); ++r) {
            double bstat = 0.0;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    const double s = sd(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                    if (!(s > 0.0)) continue;
                    const auto a = alive[i], c = alive[j];
                    bstat = std::max(bstat, std::abs((boot(r, a) - boot(r, c)) - (mean(a) - mean(c))) / s);
                }
            exceed += bstat >= stat;
        }
        const double p = static_cast<double>(exceed) / R;
        running = std::max(running, p);
        // worst model: largest max_j t_ij, first on ties
        std::size_t worst = 0;
        double worst_t = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < m; ++i) {
            const double ti = t.row(static_cast<Eigen::Index>(i)).maxCoeff();
            if (ti > worst_t) {
                worst_t = ti;
                worst = i;
            }
        }
        res.p_values[static_cast<std::size_t>(alive[worst])] = running;
        res.eliminated.push_back(static_cast<std::size_t>(alive[worst]));
        alive.erase(alive.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    res.p_values[static_cast<std::size_t>(alive.front())] = 1.0;
    for (Eigen::Index i = 0; i < M; ++i)
        if (res.p_values[static_cast<std::size_t>(i)] >= opt.alpha) res.surviving.push_back(names[static_cast<std::size_t>(i)]);
    return res;
}

inline nlohmann::json to_json(const MCSResult& r)
{
    nlohmann::json pv = nlohmann::json::object();
    for (std::size_t i = 0; i < r.models.size(); ++i) pv[r.models[i]] = r.p_values[i];
    std::vector<std::string> order;
    for (auto e : r.eliminated) order.push_back(r.models[e]);
    return {{"alpha", r.alpha},
            {"replications", r.replications},
            {"block_length", r.block_length},
            {"p_values", pv},
            {"elimination_order", order},
            {"surviving", r.surviving}};
}

struct ADFResult {
    double statistic = 0.0;
    double p_value = 0.0;
    std::size_t lags = 0;
    std::size_t nobs = 0;
};

/// MacKinnon (1994) response-surface p-value, constant-only regression.
inline double mackinnon_p_constant(double tau)
{
    if (tau > 2.74) return 1.0;
    if (tau < -18.83) return 0.0;
    double z;
    if (tau <= -1.61) z = 2.1659 + tau * (1.4412 + tau * 0.038269);
    else z = 1.7339 + tau * (0.93202 + tau * (-0.12745 + tau * -0.010368));
    return boost::math::cdf(boost::math::normal(), z);
}

namespace detail {

/// Regression of dx_t on [x_{t-1}, dx_{t-1..t-lags}, 1] over the last
/// `nobs` usable points.
inline std::pair<Matrix, Vector> adf_design(std::span<const double> x, std::size_t lags, std::size_t nobs)
{
    const std::size_t T = x.size();
    Matrix X(static_cast<Eigen::Index>(nobs), static_cast<Eigen::Index>(lags + 2));
    Vector y(static_cast<Eigen::Index>(nobs));
    for (std::size_t r = 0; r < nobs; ++r) {
        const std::size_t t = T - nobs + r; // dx_t = x[t] - x[t-1]
        const auto row = static_cast<Eigen::Index>(r);
        y(row) = x[t] - x[t - 1];
        X(row, 0) = x[t - 1];
        for (std::size_t k = 1; k <= lags; ++k) X(row, static_cast<Eigen::Index>(k)) = x[t - k] - x[t - k - 1];
        X(row, static_cast<Eigen::Index>(lags + 1)) = 1.0;
    }
    return {std::move(X), std::move(y)};
}

} // namespace detail

/// Augmented Dickey-Fuller with a constant. Lag order by AIC over 0..max_lags
/// on a common sample, then re-estimated on all usable observations.
/// max_lags < 0 selects ceil(12 (T/100)^{1/4}).
inline ADFResult adf_test(std::span<const double> x, int max_lags = -1)
{
    const std::size_t T = x.size();
    if (T < 30) throw DataError("ADF needs at least 30 observations");
    for (double v : x)
        if (!std::isfinite(v)) throw DataError("non-finite value in ADF series");
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; })) throw DataError("constant series");
    std::size_t maxlag = max_lags >= 0 ? static_cast<std::size_t>(max_lags)
                                       : static_cast<std::size_t>(std::ceil(12.0 * std::pow(static_cast<double>(T) / 100.0, 0.25)));
    const std::size_t cap = T / 2 - 2;
    maxlag = std::min(maxlag, cap);

    const std::size_t common = T - 1 - maxlag;
    std::size_t best = 0;
    double best_aic = std::numeric_limits<double>::infinity();
    for (std::size_t lag = 0; lag <= maxlag; ++lag) {
        auto [X, y] = detail::adf_design(x, lag, common);
        const auto fit = ols(X, y, "ADF");
        const double n = static_cast<double>(common);
        const double ssr = fit.residuals.squaredNorm();
        const double llf = -n / 2.0 * (std::log(2.0 * std::numbers::pi) + std::log(ssr / n) + 1.0);
        const double aic = -2.0 * llf + 2.0 * static_cast<double>(X.cols());
        if (aic < best_aic) {
            best_aic = aic;
            best = lag;
        }
    }
    const std::size_t nobs = T - 1 - best;
    auto [X, y] = detail::adf_design(x, best, nobs);
    const auto fit = ols(X, y, "ADF");
    ADFResult r;
    r.statistic = fit.coef(0) / fit.stderr_(0);
    r.p_value = mackinnon_p_constant(r.statistic);
    r.lags = best;
    r.nobs = nobs;
    return r;
}

struct DescriptiveStats {
    double mean = 0.0;
    double stddev = 0.0;          ///< sample (n - 1)
    double skewness = 0.0;        ///< m3 / m2^{3/2}
    double excess_kurtosis = 0.0; ///< m4 / m2^2 - 3
    std::size_t count = 0;
};

inline DescriptiveStats descriptive_stats(std::span<const double> x)
{
    if (x.size() < 3) throw DataError("descriptive statistics need at least 3 values");
    const double n = static_cast<double>(x.size());
    DescriptiveStats s;
    s.count = x.size();
    s.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (double v : x) {
        const double d = v - s.mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    if (!(m2 > 0.0)) throw NumericError("zero variance: skewness undefined");
    s.stddev = std::sqrt(m2 / (n - 1.0));
    m2 /= n;
    m3 /= n;
    m4 /= n;
    s.skewness = m3 / std::pow(m2, 1.5);
    s.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    return s;
}

} // namespace volnet
