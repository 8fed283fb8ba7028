#pragma once

/// @file
/// Model comparison runs: fit or train every requested model per (l, h),
/// produce iterated test forecasts and write MAFE, DM and MCS tables.

#include "volnet/core.hpp"
#include "volnet/evaluation.hpp"
#include "volnet/har.hpp"
#include "volnet/panel.hpp"
#include "volnet/spillover.hpp"
#include "volnet/training.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <future>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace volnet {

/// Iterates a HAR-family one-step rule h times. Needs a complete look-back.
class HarForecaster : public Forecaster {
public:
    explicit HarForecaster(HARCoefficients c) : coef_(std::move(c)) {}

    Matrix forecast(const Matrix& lookback, const Mask& observed, const Mask& future) const override
    {
        if (lookback.rows() < static_cast<Eigen::Index>(kHarLookback)) throw DataError("HAR forecast needs 22 rows of history");
        if (!observed.all()) throw DataError("HAR forecast needs a complete look-back");
        const auto H = future.rows();
        Matrix hist(static_cast<Eigen::Index>(kHarLookback) + H, lookback.cols());
        hist.topRows(static_cast<Eigen::Index>(kHarLookback)) = lookback.bottomRows(static_cast<Eigen::Index>(kHarLookback));
        Matrix out(H, lookback.cols());
        for (Eigen::Index k = 0; k < H; ++k) {
            const auto T = static_cast<Eigen::Index>(kHarLookback) + k;
            out.row(k) = forecast_har(coef_, hist.topRows(T)).transpose();
            hist.row(T) = out.row(k);
        }
        return out;
    }

    const HARCoefficients& coefficients() const { return coef_; }

private:
    HARCoefficients coef_;
};

inline const std::vector<std::string>& known_models()
{
    static const std::vector<std::string> names{"dcrnn-rv", "stg-spillover", "har", "vhar", "har-ks", "ghar", "gnnhar"};
    return names;
}

inline bool is_known_model(const std::string& m)
{
    const auto& k = known_models();
    return std::find(k.begin(), k.end(), m) != k.end();
}

struct CompareConfig {
    std::vector<std::string> models;
    std::vector<std::pair<std::size_t, std::size_t>> grid{{100, 1}};
    TrainConfig train;
    GnnHarOptions gnnhar;
    MCSOptions mcs;

    void validate() const
    {
        if (models.empty()) throw ConfigError("no models");
        for (const auto& m : models)
            if (!is_known_model(m)) throw ConfigError("unknown model '" + m + "'");
        if (grid.empty()) throw ConfigError("empty (look_back, horizon) grid");
        train.validate();
    }
};

inline nlohmann::json to_json(const CompareConfig& c)
{
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [l, h] : c.grid) grid.push_back({l, h});
    return {{"models", c.models},
            {"grid", grid},
            {"train", to_json(c.train)},
            {"gnnhar", {{"layers", c.gnnhar.layers}, {"epochs", c.gnnhar.epochs}, {"step_size", c.gnnhar.step_size}}},
            {"mcs", {{"alpha", c.mcs.alpha}, {"replications", c.mcs.replications}, {"block_length", c.mcs.block_length}}}};
}

inline CompareConfig compare_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j, {"models", "grid", "train", "gnnhar", "mcs"}, "compare config");
    CompareConfig c;
    try {
        if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
        if (j.contains("grid")) {
            c.grid.clear();
            for (const auto& g : j.at("grid")) c.grid.emplace_back(g.at(0).get<std::size_t>(), g.at(1).get<std::size_t>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid compare config: ") + e.what());
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("gnnhar")) {
        const auto& g = j.at("gnnhar");
        detail::reject_unknown(g, {"layers", "epochs", "step_size"}, "gnnhar");
        detail::read_key(g, "layers", c.gnnhar.layers);
        detail::read_key(g, "epochs", c.gnnhar.epochs);
        detail::read_key(g, "step_size", c.gnnhar.step_size);
    }
    if (j.contains("mcs")) {
        const auto& m = j.at("mcs");
        detail::reject_unknown(m, {"alpha", "replications", "block_length"}, "mcs");
        detail::read_key(m, "alpha", c.mcs.alpha);
        detail::read_key(m, "replications", c.mcs.replications);
        detail::read_key(m, "block_length", c.mcs.block_length);
    }
    c.validate();
    return c;
}

/// A plain CSV table of strings with a header row.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline void write_csv(std::ostream& out, const Table& t)
{
    auto line = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
        out << '\n';
    };
    line(t.header);
    for (const auto& r : t.rows) line(r);
}

inline Table read_csv(std::istream& in)
{
    Table t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        for (auto c : detail::split_csv(line)) cells.emplace_back(c);
        if (first) {
            t.header = std::move(cells);
            first = false;
        } else {
            if (cells.size() != t.header.size()) throw DataError("ragged CSV row: " + line);
            t.rows.push_back(std::move(cells));
        }
    }
    if (first) throw DataError("empty CSV");
    return t;
}

/// Loss series file: one value per line, optionally after a header; with
/// several columns the last one is used.
inline std::vector<double> read_loss_series(std::istream& in)
{
    std::vector<double> out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = detail::split_csv(line);
        const auto cell = cells.back();
        if (first) {
            first = false;
            double v;
            auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (ec != std::errc{} || p != cell.data() + cell.size()) continue; // header
        }
        out.push_back(parse_double(cell));
    }
    return out;
}

/// Iterated series as a panel: forecasts at active cells, empty otherwise.
inline RVPanel series_panel(const IteratedSeries& s, const std::vector<std::string>& indices, bool truth = false)
{
    Matrix v = truth ? s.truth : s.forecast;
    for (Eigen::Index t = 0; t < v.rows(); ++t)
        for (Eigen::Index n = 0; n < v.cols(); ++n)
            if (!s.active(t, n)) v(t, n) = 0.0;
    return RVPanel(s.dates, indices, v, s.active);
}

/// Everything needed to rebuild a trained DCGRU forecaster.
struct ModelBundle {
    TrainConfig config;
    std::vector<std::string> indices;
    StandardizerStats stats;
    Matrix split_graph;
    DCGRUModel model;
};

inline ModelBundle make_bundle(const TrainResult& r)
{
    return {r.setup.config, r.setup.panel.indices(), r.setup.stats, r.setup.split_graph, r.model};
}

inline nlohmann::json to_json(const ModelBundle& b)
{
    nlohmann::json g = nlohmann::json::array();
    for (Eigen::Index i = 0; i < b.split_graph.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < b.split_graph.cols(); ++j) row.push_back(b.split_graph(i, j));
        g.push_back(row);
    }
    return {{"format", "volnet-bundle"},
            {"version", 1},
            {"config", to_json(b.config)},
            {"indices", b.indices},
            {"standardizer", to_json(b.stats)},
            {"split_graph", g},
            {"model", to_json(b.model)}};
}

inline ModelBundle bundle_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("format").get<std::string>() != "volnet-bundle") throw DataError("not a model bundle");
        if (j.at("version").get<int>() != 1) throw DataError("unsupported bundle version");
        ModelBundle b;
        b.config = train_config_from_json(j.at("config"));
        b.indices = j.at("indices").get<std::vector<std::string>>();
        b.stats = standardizer_from_json(j.at("standardizer"), b.indices);
        const auto& g = j.at("split_graph");
        const auto N = static_cast<Eigen::Index>(b.indices.size());
        if (static_cast<Eigen::Index>(g.size()) != N) throw DataError("split graph shape does not match indices");
        b.split_graph.resize(N, N);
        for (Eigen::Index r = 0; r < N; ++r)
            for (Eigen::Index c = 0; c < N; ++c)
                b.split_graph(r, c) = g.at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
        b.model = model_from_json(j.at("model"));
        return b;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed model bundle: ") + e.what());
    }
}

inline DcrnnForecaster make_forecaster(const ModelBundle& b)
{
    return DcrnnForecaster(b.model, b.stats, b.config.graph_mode, b.split_graph, b.config.spillover);
}

/// Test-split iterated forecast of a saved model on `panel`, using the
/// split fractions from its config.
inline IteratedSeries bundle_test_forecast(const ModelBundle& b, const RVPanel& panel)
{
    if (panel.indices() != b.indices) throw DataError("panel indices do not match the model");
    const SplitPlan split = split_dates(panel, b.config.train_fraction, b.config.val_fraction);
    const RVPanel work = b.config.calendar_mode == CalendarMode::Intersection ? intersection_calendar(panel) : panel;
    const auto [first, last] = work.row_span(split.test);
    const std::size_t l = b.config.look_back;
    if (first < l) throw DataError("not enough history before the test split");
    const DcrnnForecaster f = make_forecaster(b);
    return iterated_forecast(f, work, first - l, last, l, b.config.horizon);
}

/// Fits one HAR-family model on the training split of the intersection
/// calendar and forecasts its test split.
inline IteratedSeries har_test_forecast(const std::string& model, const RVPanel& panel, const TrainConfig& cfg,
                                        const GnnHarOptions& gnn)
{
    const SplitPlan split = split_dates(panel, cfg.train_fraction, cfg.val_fraction);
    const RVPanel work = intersection_calendar(panel);
    const auto [t0, t1] = work.row_span(split.train);
    const Matrix train = work.values().middleRows(static_cast<Eigen::Index>(t0), static_cast<Eigen::Index>(t1 - t0));
    HARCoefficients c;
    if (model == "har") c = fit_har_panel(train);
    else if (model == "vhar") c = fit_vhar(train);
    else if (model == "har-ks") c = fit_har_ks(train);
    else {
        const auto est = panel_adjacency(work, t0, t1, cfg.spillover);
        if (est.fallback()) throw DataError("no spillover graph for the training split: " + est.fallback_reason);
        if (model == "ghar") c = fit_ghar(train, est.graph->theta);
        else if (model == "gnnhar") {
            GnnHarOptions o = gnn;
            o.seed = cfg.seed;
            c = fit_gnnhar(train, est.graph->theta, o).coefs;
        } else throw ConfigError("unknown HAR-family model '" + model + "'");
    }
    const auto [first, last] = work.row_span(split.test);
    const std::size_t l = std::max(cfg.look_back, kHarLookback);
    if (first < l) throw DataError("not enough history before the test split");
    return iterated_forecast(HarForecaster(std::move(c)), work, first - l, last, l, cfg.horizon);
}

/// Test forecast of any known model for one (l, h) cell.
inline IteratedSeries model_test_forecast(const std::string& model, const RVPanel& panel, TrainConfig cfg,
                                          const GnnHarOptions& gnn)
{
    if (model == "dcrnn-rv" || model == "stg-spillover") {
        cfg.graph_mode = model == "dcrnn-rv" ? GraphMode::Dynamic : GraphMode::Static;
        cfg.calendar_mode = model == "dcrnn-rv" ? CalendarMode::Union : CalendarMode::Intersection;
        const TrainResult r = train(cfg, panel);
        return test_forecast(make_forecaster(r), r.setup);
    }
    return har_test_forecast(model, panel, cfg, gnn);
}

/// Per-index comparison tables for one (l, h) cell, on common target dates.
struct CellReport {
    std::size_t look_back = 0, horizon = 0;
    std::vector<std::string> models;
    std::vector<std::string> indices;
    Matrix mafe; ///< indices x models
    struct DmRow {
        std::string index, model_a, model_b;
        DMResult result;
    };
    std::vector<DmRow> dm;
    std::vector<std::pair<std::string, MCSResult>> mcs; ///< per index
    std::vector<std::string> notes;                     ///< tests that could not be run
};

inline CellReport compare_series(const std::vector<std::string>& models, const std::vector<IteratedSeries>& raw,
                                 const std::vector<std::string>& indices, std::size_t l, std::size_t h,
                                 const MCSOptions& mcs)
{
    CellReport rep;
    rep.look_back = l;
    rep.horizon = h;
    rep.models = models;
    rep.indices = indices;
    const auto series = align_common_dates(raw);
    const auto N = static_cast<Eigen::Index>(indices.size());
    const auto M = static_cast<Eigen::Index>(models.size());
    if (series.front().dates.empty()) throw DataError("models share no forecast dates");
    rep.mafe.resize(N, M);
    for (Eigen::Index m = 0; m < M; ++m) rep.mafe.col(m) = mafe(series[static_cast<std::size_t>(m)]);

    for (Eigen::Index n = 0; n < N; ++n) {
        const std::string& idx = indices[static_cast<std::size_t>(n)];
        // dates active for every model at this index
        std::vector<Eigen::Index> rows;
        for (Eigen::Index t = 0; t < series.front().forecast.rows(); ++t) {
            bool ok = true;
            for (const auto& s : series) ok = ok && s.active(t, n);
            if (ok) rows.push_back(t);
        }
        Matrix err(static_cast<Eigen::Index>(rows.size()), M);
        for (Eigen::Index m = 0; m < M; ++m)
            for (std::size_t r = 0; r < rows.size(); ++r) {
                const auto& s = series[static_cast<std::size_t>(m)];
                err(static_cast<Eigen::Index>(r), m) = s.forecast(rows[r], n) - s.truth(rows[r], n);
            }
        for (Eigen::Index a = 0; a < M; ++a)
            for (Eigen::Index b = a + 1; b < M; ++b) {
                const Vector ea = err.col(a), eb = err.col(b);
                try {
                    rep.dm.push_back({idx, models[static_cast<std::size_t>(a)], models[static_cast<std::size_t>(b)],
                                      dm_test({ea.data(), static_cast<std::size_t>(ea.size())},
                                              {eb.data(), static_cast<std::size_t>(eb.size())}, h)});
                } catch (const Error& e) {
                    rep.notes.push_back("dm " + idx + " " + models[static_cast<std::size_t>(a)] + " vs " +
                                        models[static_cast<std::size_t>(b)] + ": " + e.what());
                }
            }
        if (M >= 2) {
            try {
                rep.mcs.emplace_back(idx, mcs_test(err.cwiseAbs(), models, mcs));
            } catch (const Error& e) {
                rep.notes.push_back("mcs " + idx + ": " + e.what());
            }
        }
    }
    return rep;
}

inline Table mafe_table(const CellReport& r)
{
    Table t;
    t.header = {"index"};
    t.header.insert(t.header.end(), r.models.begin(), r.models.end());
    for (std::size_t n = 0; n < r.indices.size(); ++n) {
        std::vector<std::string> row{r.indices[n]};
        for (Eigen::Index m = 0; m < r.mafe.cols(); ++m) row.push_back(format_double(r.mafe(static_cast<Eigen::Index>(n), m)));
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline Table dm_table(const CellReport& r)
{
    Table t;
    t.header = {"index", "model_a", "model_b", "statistic", "p_value", "p_value_two_sided"};
    for (const auto& d : r.dm)
        t.rows.push_back({d.index, d.model_a, d.model_b, format_double(d.result.statistic), format_double(d.result.p_value),
                          format_double(d.result.p_value_two_sided)});
    return t;
}

inline Table mcs_table(const CellReport& r)
{
    Table t;
    t.header = {"index", "model", "p_value", "in_set"};
    for (const auto& [idx, res] : r.mcs)
        for (std::size_t m = 0; m < res.models.size(); ++m)
            t.rows.push_back({idx, res.models[m], format_double(res.p_values[m]), res.survives(m) ? "1" : "0"});
    return t;
}

inline nlohmann::json to_json(const CellReport& r)
{
    nlohmann::json mafe_j = nlohmann::json::object();
    for (std::size_t n = 0; n < r.indices.size(); ++n)
        for (std::size_t m = 0; m < r.models.size(); ++m)
            mafe_j[r.indices[n]][r.models[m]] = r.mafe(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    nlohmann::json dm = nlohmann::json::array();
    for (const auto& d : r.dm) {
        auto j = to_json(d.result);
        j["index"] = d.index;
        j["model_a"] = d.model_a;
        j["model_b"] = d.model_b;
        dm.push_back(j);
    }
    nlohmann::json mcs = nlohmann::json::object();
    for (const auto& [idx, res] : r.mcs) mcs[idx] = to_json(res);
    return {{"look_back", r.look_back}, {"horizon", r.horizon}, {"models", r.models}, {"mafe", mafe_j},
            {"dm", dm},                 {"mcs", mcs},            {"notes", r.notes}};
}

inline std::string cell_name(std::size_t l, std::size_t h) { return "l" + std::to_string(l) + "_h" + std::to_string(h); }

inline void write_text(const std::filesystem::path& p, const std::string& text)
{
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

inline void write_table(const std::filesystem::path& p, const Table& t)
{
    std::ostringstream os;
    write_csv(os, t);
    write_text(p, os.str());
}

/// Writes one report directory; returns the files written.
inline std::vector<std::filesystem::path> write_cell_report(const std::filesystem::path& dir, const CellReport& r)
{
    std::filesystem::create_directories(dir);
    std::vector<std::filesystem::path> files{dir / "mafe.csv", dir / "dm.csv", dir / "mcs.csv", dir / "report.json"};
    write_table(files[0], mafe_table(r));
    write_table(files[1], dm_table(r));
    write_table(files[2], mcs_table(r));
    write_text(files[3], to_json(r).dump(2) + "\n");
    return files;
}

inline CellReport run_cell(const CompareConfig& cfg, const RVPanel& panel, std::size_t l, std::size_t h)
{
    TrainConfig tc = cfg.train;
    tc.look_back = l;
    tc.horizon = h;
    tc.validate();
    std::vector<IteratedSeries> series;
    for (const auto& m : cfg.models) series.push_back(model_test_forecast(m, panel, tc, cfg.gnnhar));
    MCSOptions mo = cfg.mcs;
    mo.seed = tc.seed;
    return compare_series(cfg.models, series, panel.indices(), l, h, mo);
}

/// Runs every model over every grid cell; one report directory per cell.
/// Up to `jobs` cells are computed at once; outputs do not depend on it.
inline std::vector<std::filesystem::path> compare_pipeline(const CompareConfig& cfg, const RVPanel& panel,
                                                           const std::filesystem::path& out_dir, std::size_t jobs = 1)
{
    cfg.validate();
    std::vector<std::filesystem::path> written;
    jobs = std::max<std::size_t>(1, jobs);
    for (std::size_t b = 0; b < cfg.grid.size(); b += jobs) {
        const std::size_t e = std::min(cfg.grid.size(), b + jobs);
        std::vector<std::future<CellReport>> running;
        for (std::size_t k = b; k < e; ++k) {
            const auto [l, h] = cfg.grid[k];
            running.push_back(std::async(jobs > 1 ? std::launch::async : std::launch::deferred,
                                         [&cfg, &panel, l = l, h = h] { return run_cell(cfg, panel, l, h); }));
        }
        for (auto& f : running) {
            const CellReport rep = f.get();
            const auto files = write_cell_report(out_dir / cell_name(rep.look_back, rep.horizon), rep);
            written.insert(written.end(), files.begin(), files.end());
        }
    }
    return written;
}

} // namespace volnet
