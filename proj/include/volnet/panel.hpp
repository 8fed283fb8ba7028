#pragma once

/// @file
/// Realized-volatility panels on the union trading calendar, standardization,
/// and the input/target/adjacency masks used for training on uncommon days.

#include "volnet/core.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace volnet {

/// Sum of squared intraday returns for one day (realized variance).
/// The panel unit is its square root.
inline double compute_rv(std::span<const double> intraday_returns)
{
    if (intraday_returns.empty()) throw DataError("empty return list");
    double acc = 0.0;
    for (double r : intraday_returns) {
        if (!std::isfinite(r)) throw DataError("non-finite return");
        acc += r * r;
    }
    return acc;
}

/// Half-open date interval [begin, end).
struct DateRange {
    Date begin;
    Date end;

    bool contains(const Date& d) const { return begin <= d && d < end; }
};

/// Dated T x N matrix of square-rooted realized volatility with explicit
/// per-cell activity flags. Rows are the union of all markets' trading days.
class RVPanel {
public:
    RVPanel() = default;

    /// Validates every invariant; throws DataError on violation.
    RVPanel(std::vector<Date> dates, std::vector<std::string> indices, Matrix values, Mask observed)
        : dates_(std::move(dates)), indices_(std::move(indices)), values_(std::move(values)),
          observed_(std::move(observed))
    {
        validate();
    }

    std::size_t rows() const { return dates_.size(); }
    std::size_t cols() const { return indices_.size(); }
    const std::vector<Date>& dates() const { return dates_; }
    const std::vector<std::string>& indices() const { return indices_; }
    const Matrix& values() const { return values_; }
    const Mask& observed() const { return observed_; }

    bool row_complete(std::size_t t) const { return observed_.row(static_cast<Eigen::Index>(t)).all(); }

    /// Half-open row span [first, last) whose dates fall in the range.
    std::pair<std::size_t, std::size_t> row_span(const DateRange& range) const
    {
        auto lo = std::lower_bound(dates_.begin(), dates_.end(), range.begin);
        auto hi = std::lower_bound(dates_.begin(), dates_.end(), range.end);
        return {static_cast<std::size_t>(lo - dates_.begin()), static_cast<std::size_t>(hi - dates_.begin())};
    }

    std::optional<std::size_t> find_row(const Date& d) const
    {
        auto it = std::lower_bound(dates_.begin(), dates_.end(), d);
        if (it == dates_.end() || *it != d) return std::nullopt;
        return static_cast<std::size_t>(it - dates_.begin());
    }

    /// Keeps the listed rows (ascending). Columns left without observations are rejected.
    RVPanel select_rows(const std::vector<std::size_t>& rows) const
    {
        std::vector<Date> d;
        Matrix v(static_cast<Eigen::Index>(rows.size()), values_.cols());
        Mask o(static_cast<Eigen::Index>(rows.size()), values_.cols());
        d.reserve(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            d.push_back(dates_.at(rows[i]));
            v.row(static_cast<Eigen::Index>(i)) = values_.row(static_cast<Eigen::Index>(rows[i]));
            o.row(static_cast<Eigen::Index>(i)) = observed_.row(static_cast<Eigen::Index>(rows[i]));
        }
        return RVPanel(std::move(d), indices_, std::move(v), std::move(o));
    }

    RVPanel slice(std::size_t first, std::size_t last) const
    {
        std::vector<std::size_t> r(last - first);
        std::iota(r.begin(), r.end(), first);
        return select_rows(r);
    }

private:
    void validate() const
    {
        const auto T = static_cast<Eigen::Index>(dates_.size());
        const auto N = static_cast<Eigen::Index>(indices_.size());
        if (N == 0) throw DataError("panel has no indices");
        if (values_.rows() != T || values_.cols() != N || observed_.rows() != T || observed_.cols() != N)
            throw DataError("panel shape mismatch");
        for (std::size_t t = 1; t < dates_.size(); ++t) {
            if (dates_[t] == dates_[t - 1]) throw DataError("duplicate date " + format_date(dates_[t]));
            if (dates_[t] < dates_[t - 1]) throw DataError("non-increasing date " + format_date(dates_[t]));
        }
        for (Eigen::Index t = 0; t < T; ++t) {
            if (!observed_.row(t).any()) throw DataError("row with all cells empty at " + format_date(dates_[t]));
            for (Eigen::Index n = 0; n < N; ++n) {
                if (!observed_(t, n)) continue;
                const double v = values_(t, n);
                if (!std::isfinite(v)) throw DataError("non-finite RV at " + format_date(dates_[t]));
                if (v < 0.0) throw DataError("negative RV at " + format_date(dates_[t]));
            }
        }
        for (Eigen::Index n = 0; n < N; ++n)
            if (T > 0 && !observed_.col(n).any())
                throw DataError("index " + indices_[static_cast<std::size_t>(n)] + " has no observations");
    }

    std::vector<Date> dates_;
    std::vector<std::string> indices_;
    Matrix values_;
    Mask observed_;
};

/// Rows where every market trades (the intersection calendar).
inline RVPanel intersection_calendar(const RVPanel& panel)
{
    std::vector<std::size_t> keep;
    for (std::size_t t = 0; t < panel.rows(); ++t)
        if (panel.row_complete(t)) keep.push_back(t);
    if (keep.empty()) throw DataError("no common trading days");
    return panel.select_rows(keep);
}

struct LoadOptions {
    /// Cells hold realized variance; the loader takes square roots.
    bool raw_variance = false;
};

namespace detail {

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> cells;
    std::size_t pos = 0;
    while (true) {
        auto comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            cells.push_back(trim(line.substr(pos)));
            break;
        }
        cells.push_back(trim(line.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return cells;
}

} // namespace detail

/// Reads the panel CSV format: header `date,IDX1,...,IDXN`, ISO dates, one row
/// per union-calendar day, an empty cell meaning the market was closed.
inline RVPanel load_panel(std::istream& in, const LoadOptions& opts = {})
{
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty panel file");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    auto header = detail::split_csv(line);
    if (header.size() < 2 || header[0] != "date") throw DataError("header must start with 'date'");
    std::vector<std::string> indices(header.begin() + 1, header.end());
    const std::size_t N = indices.size();

    std::vector<Date> dates;
    std::vector<double> vals;
    std::vector<bool> obs;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        auto cells = detail::split_csv(line);
        if (cells.size() != N + 1)
            throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(N + 1) + " cells");
        const Date d = parse_date(cells[0]);
        if (!dates.empty()) {
            if (d == dates.back()) throw DataError("duplicate date " + format_date(d));
            if (d < dates.back()) throw DataError("non-increasing date " + format_date(d));
        }
        dates.push_back(d);
        bool any = false;
        for (std::size_t n = 0; n < N; ++n) {
            if (cells[n + 1].empty()) {
                vals.push_back(0.0);
                obs.push_back(false);
                continue;
            }
            double v = parse_double(cells[n + 1]);
            if (!std::isfinite(v)) throw DataError("non-finite RV on line " + std::to_string(line_no));
            if (v < 0.0) throw DataError("negative RV on line " + std::to_string(line_no));
            if (opts.raw_variance) v = std::sqrt(v);
            vals.push_back(v);
            obs.push_back(true);
            any = true;
        }
        if (!any) throw DataError("row with all cells empty at " + format_date(d));
    }
    const auto T = static_cast<Eigen::Index>(dates.size());
    Matrix values(T, static_cast<Eigen::Index>(N));
    Mask observed(T, static_cast<Eigen::Index>(N));
    for (Eigen::Index t = 0; t < T; ++t)
        for (Eigen::Index n = 0; n < static_cast<Eigen::Index>(N); ++n) {
            const auto k = static_cast<std::size_t>(t) * N + static_cast<std::size_t>(n);
            values(t, n) = vals[k];
            observed(t, n) = obs[k];
        }
    return RVPanel(std::move(dates), std::move(indices), std::move(values), std::move(observed));
}

inline RVPanel load_panel_string(const std::string& text, const LoadOptions& opts = {})
{
    std::istringstream in(text);
    return load_panel(in, opts);
}

inline void write_panel(std::ostream& out, const RVPanel& panel)
{
    out << "date";
    for (const auto& name : panel.indices()) out << ',' << name;
    out << '\n';
    for (std::size_t t = 0; t < panel.rows(); ++t) {
        out << format_date(panel.dates()[t]);
        for (std::size_t n = 0; n < panel.cols(); ++n) {
            out << ',';
            const auto ti = static_cast<Eigen::Index>(t);
            const auto ni = static_cast<Eigen::Index>(n);
            if (panel.observed()(ti, ni)) out << format_double(panel.values()(ti, ni));
        }
        out << '\n';
    }
}

/// Per-index location/scale computed over observed training entries.
struct StandardizerStats {
    std::vector<std::string> indices;
    Vector mean;
    Vector stddev;

    double standardize(double v, Eigen::Index n) const { return (v - mean(n)) / stddev(n); }
    double destandardize(double z, Eigen::Index n) const { return z * stddev(n) + mean(n); }
};

inline nlohmann::json to_json(const StandardizerStats& s)
{
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t n = 0; n < s.indices.size(); ++n)
        j[s.indices[n]] = {{"mean", s.mean(static_cast<Eigen::Index>(n))},
                           {"std", s.stddev(static_cast<Eigen::Index>(n))}};
    return j;
}

/// Reads `{index: {mean, std}}`, ordering entries by `indices`.
inline StandardizerStats standardizer_from_json(const nlohmann::json& j, const std::vector<std::string>& indices)
{
    StandardizerStats s;
    s.indices = indices;
    s.mean.resize(static_cast<Eigen::Index>(indices.size()));
    s.stddev.resize(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t n = 0; n < indices.size(); ++n) {
        if (!j.contains(indices[n])) throw DataError("standardizer lacks index " + indices[n]);
        s.mean(static_cast<Eigen::Index>(n)) = j.at(indices[n]).at("mean").get<double>();
        s.stddev(static_cast<Eigen::Index>(n)) = j.at(indices[n]).at("std").get<double>();
        if (!(s.stddev(static_cast<Eigen::Index>(n)) > 0.0)) throw DataError("standardizer std must be positive");
    }
    return s;
}

/// Mean and sample standard deviation per index over observed cells whose
/// dates fall inside `range`.
inline StandardizerStats fit_standardizer(const RVPanel& panel, const DateRange& range)
{
    const auto [first, last] = panel.row_span(range);
    const auto N = static_cast<Eigen::Index>(panel.cols());
    StandardizerStats s{panel.indices(), Vector::Zero(N), Vector::Zero(N)};
    for (Eigen::Index n = 0; n < N; ++n) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t t = first; t < last; ++t)
            if (panel.observed()(static_cast<Eigen::Index>(t), n)) {
                sum += panel.values()(static_cast<Eigen::Index>(t), n);
                ++count;
            }
        const std::string& name = panel.indices()[static_cast<std::size_t>(n)];
        if (count < 2) throw DataError("insufficient observations for index " + name);
        const double mean = sum / static_cast<double>(count);
        double ss = 0.0;
        for (std::size_t t = first; t < last; ++t)
            if (panel.observed()(static_cast<Eigen::Index>(t), n)) {
                const double d = panel.values()(static_cast<Eigen::Index>(t), n) - mean;
                ss += d * d;
            }
        const double sd = std::sqrt(ss / static_cast<double>(count - 1));
        if (!(sd > 0.0)) throw DataError("zero variance for index " + name);
        s.mean(n) = mean;
        s.stddev(n) = sd;
    }
    return s;
}

/// 0/1 pattern that cuts every edge touching an inactive market:
/// entry (i, j) is 1 exactly when both i and j trade that day.
inline Matrix adjacency_mask(const Eigen::Ref<const Eigen::Matrix<bool, 1, Eigen::Dynamic>>& active)
{
    const auto N = active.cols();
    Matrix m(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) m(i, j) = (active(i) && active(j)) ? 1.0 : 0.0;
    return m;
}

/// One training sample: masked standardized inputs/targets with their masks
/// and one adjacency mask per day of the window.
struct MaskedWindowPair {
    Matrix x;  ///< T_X x N
    Matrix y;  ///< T_Y x N
    Matrix ex; ///< T_X x N, 0/1
    Matrix ey; ///< T_Y x N, 0/1
    std::vector<Matrix> adjacency_masks; ///< T_X + T_Y matrices, N x N
    Date window_start;
    std::size_t start_row = 0;

    std::size_t input_len() const { return static_cast<std::size_t>(x.rows()); }
    std::size_t output_len() const { return static_cast<std::size_t>(y.rows()); }
};

/// Builds the window whose first input row is `start_row`.
inline MaskedWindowPair build_window_pair_at(const RVPanel& panel, const StandardizerStats& stats,
                                             std::size_t start_row, std::size_t t_x, std::size_t t_y)
{
    if (t_x == 0 || t_y == 0) throw ConfigError("window lengths must be positive");
    if (start_row + t_x + t_y > panel.rows()) throw DataError("window exceeds panel");
    const auto N = static_cast<Eigen::Index>(panel.cols());
    MaskedWindowPair w;
    w.window_start = panel.dates()[start_row];
    w.start_row = start_row;
    w.x = Matrix::Zero(static_cast<Eigen::Index>(t_x), N);
    w.ex = Matrix::Zero(static_cast<Eigen::Index>(t_x), N);
    w.y = Matrix::Zero(static_cast<Eigen::Index>(t_y), N);
    w.ey = Matrix::Zero(static_cast<Eigen::Index>(t_y), N);
    w.adjacency_masks.reserve(t_x + t_y);
    for (std::size_t k = 0; k < t_x + t_y; ++k) {
        const auto t = static_cast<Eigen::Index>(start_row + k);
        const bool input = k < t_x;
        Matrix& val = input ? w.x : w.y;
        Matrix& msk = input ? w.ex : w.ey;
        const auto r = static_cast<Eigen::Index>(input ? k : k - t_x);
        for (Eigen::Index n = 0; n < N; ++n) {
            if (!panel.observed()(t, n)) continue;
            val(r, n) = stats.standardize(panel.values()(t, n), n);
            msk(r, n) = 1.0;
        }
        w.adjacency_masks.push_back(adjacency_mask(panel.observed().row(t)));
    }
    return w;
}

inline MaskedWindowPair build_window_pair(const RVPanel& panel, const StandardizerStats& stats, const Date& start,
                                          std::size_t t_x, std::size_t t_y)
{
    const auto row = panel.find_row(start);
    if (!row) throw DataError("window start " + format_date(start) + " not in panel");
    return build_window_pair_at(panel, stats, *row, t_x, t_y);
}

} // namespace volnet
