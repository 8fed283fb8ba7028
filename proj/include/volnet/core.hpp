#pragma once

/// @file
/// Shared vocabulary for the volnet library: matrix aliases, calendar dates,
/// the error hierarchy and a few numeric helpers.

#include <Eigen/Dense>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace volnet {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;
using Date = std::chrono::year_month_day;

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or unusable input data (bad CSV, too few observations, ...).
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: singular systems, non-finite intermediates, divergence.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration or argument combination.
class ConfigError : public Error {
public:
    using Error::Error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

/// Parses a strict ISO-8601 calendar date (YYYY-MM-DD).
inline Date parse_date(std::string_view s)
{
    auto bad = [&] { return DataError("invalid date '" + std::string(s) + "'"); };
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') throw bad();
    int y = 0;
    unsigned m = 0, d = 0;
    auto num = [&](std::size_t pos, std::size_t len, auto& out) {
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        if (ec != std::errc{} || p != s.data() + pos + len) throw bad();
    };
    num(0, 4, y);
    num(5, 2, m);
    num(8, 2, d);
    Date date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!date.ok()) throw bad();
    return date;
}

inline std::string format_date(const Date& d)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                  static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
    return buf;
}

inline Date add_days(const Date& d, int days)
{
    return Date{std::chrono::sys_days{d} + std::chrono::days{days}};
}

/// Shortest decimal text that round-trips to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

inline double parse_double(std::string_view s)
{
    double v = 0.0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw DataError("invalid number '" + std::string(s) + "'");
    return v;
}

} // namespace volnet
