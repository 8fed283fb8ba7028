#pragma once

/// @file
/// Windowing, per-window spillover graphs and the optimisation loop for the
/// DCGRU forecaster, plus its Forecaster adapter.

#include "volnet/core.hpp"
#include "volnet/dcrnn.hpp"
#include "volnet/evaluation.hpp"
#include "volnet/optim.hpp"
#include "volnet/panel.hpp"
#include "volnet/rng.hpp"
#include "volnet/spillover.hpp"

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <algorithm>
#include <chrono>
#include <functional>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace volnet {

enum class GraphMode { Dynamic, Static };
enum class CalendarMode { Union, Intersection };

inline const char* to_string(GraphMode g) { return g == GraphMode::Dynamic ? "dynamic" : "static"; }
inline const char* to_string(CalendarMode c) { return c == CalendarMode::Union ? "union" : "intersection"; }

inline GraphMode parse_graph_mode(const std::string& s)
{
    if (s == "dynamic") return GraphMode::Dynamic;
    if (s == "static") return GraphMode::Static;
    throw ConfigError("graph_mode must be dynamic or static, got '" + s + "'");
}

inline CalendarMode parse_calendar_mode(const std::string& s)
{
    if (s == "union") return CalendarMode::Union;
    if (s == "intersection") return CalendarMode::Intersection;
    throw ConfigError("calendar_mode must be union or intersection, got '" + s + "'");
}

struct TrainConfig {
    std::size_t look_back = 100;
    std::size_t horizon = 1;
    std::size_t batch_size = 32;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    double step_size = 1e-2;
    double train_fraction = 0.7;
    double val_fraction = 0.1;
    double test_fraction = 0.2;
    GraphMode graph_mode = GraphMode::Dynamic;
    CalendarMode calendar_mode = CalendarMode::Union;
    SpilloverSettings spillover;
    DCGRUConfig model;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (look_back < 25) throw ConfigError("look_back must be at least 25");
        if (horizon < 1) throw ConfigError("horizon must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
        if (!(step_size > 0.0)) throw ConfigError("step_size must be positive");
        for (double f : {train_fraction, val_fraction, test_fraction})
            if (!(f > 0.0 && f < 1.0)) throw ConfigError("split fractions must lie in (0, 1)");
        if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
            throw ConfigError("split fractions must sum to 1");
        if (spillover.p < 1) throw ConfigError("spillover p must be at least 1");
        if (spillover.horizon < 1) throw ConfigError("spillover horizon must be at least 1");
        if (!(spillover.keep_fraction >= 0.0 && spillover.keep_fraction <= 1.0))
            throw ConfigError("keep_fraction must lie in [0, 1]");
        if (model.num_layers < 1 || model.hidden_dim < 1 || model.k_max < 1)
            throw ConfigError("model layers, hidden_dim and k_max must be positive");
    }
};

inline nlohmann::json to_json(const TrainConfig& c)
{
    return {{"look_back", c.look_back},
            {"horizon", c.horizon},
            {"batch_size", c.batch_size},
            {"max_epochs", c.max_epochs},
            {"patience", c.patience},
            {"step_size", c.step_size},
            {"split", {{"train", c.train_fraction}, {"val", c.val_fraction}, {"test", c.test_fraction}}},
            {"graph_mode", to_string(c.graph_mode)},
            {"calendar_mode", to_string(c.calendar_mode)},
            {"spillover",
             {{"p", c.spillover.p},
              {"horizon", c.spillover.horizon},
              {"keep_fraction", c.spillover.keep_fraction},
              {"min_rows", c.spillover.min_rows},
              {"ridge", c.spillover.ridge}}},
            {"model", {{"num_layers", c.model.num_layers}, {"hidden_dim", c.model.hidden_dim}, {"k_max", c.model.k_max}}},
            {"seed", c.seed}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where)
{
    if (!j.is_object()) throw ConfigError(where + " must be a table");
    for (const auto& [k, v] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || k == name;
        if (!ok) throw ConfigError("unknown key '" + k + "' in " + where);
    }
}

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out)
{
    if (!j.contains(key)) return;
    try {
        if constexpr (std::is_unsigned_v<T>) {
            const auto& v = j.at(key);
            if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("");
            out = static_cast<T>(v.get<long long>());
        } else {
            out = j.at(key).get<T>();
        }
    } catch (const std::exception&) {
        throw ConfigError(std::string("invalid value for '") + key + "'");
    }
}

} // namespace detail

inline TrainConfig train_config_from_json(const nlohmann::json& j)
{
    detail::reject_unknown(j,
                           {"look_back", "horizon", "batch_size", "max_epochs", "patience", "step_size", "split",
                            "graph_mode", "calendar_mode", "spillover", "model", "seed"},
                           "config");
    TrainConfig c;
    detail::read_key(j, "look_back", c.look_back);
    detail::read_key(j, "horizon", c.horizon);
    detail::read_key(j, "batch_size", c.batch_size);
    detail::read_key(j, "max_epochs", c.max_epochs);
    detail::read_key(j, "patience", c.patience);
    detail::read_key(j, "step_size", c.step_size);
    detail::read_key(j, "seed", c.seed);
    if (j.contains("split")) {
        const auto& s = j.at("split");
        detail::reject_unknown(s, {"train", "val", "test"}, "split");
        detail::read_key(s, "train", c.train_fraction);
        detail::read_key(s, "val", c.val_fraction);
        detail::read_key(s, "test", c.test_fraction);
    }
    if (j.contains("graph_mode")) c.graph_mode = parse_graph_mode(j.at("graph_mode").get<std::string>());
    if (j.contains("calendar_mode")) c.calendar_mode = parse_calendar_mode(j.at("calendar_mode").get<std::string>());
    if (j.contains("spillover")) {
        const auto& s = j.at("spillover");
        detail::reject_unknown(s, {"p", "horizon", "keep_fraction", "min_rows", "ridge"}, "spillover");
        detail::read_key(s, "p", c.spillover.p);
        detail::read_key(s, "horizon", c.spillover.horizon);
        detail::read_key(s, "keep_fraction", c.spillover.keep_fraction);
        detail::read_key(s, "min_rows", c.spillover.min_rows);
        detail::read_key(s, "ridge", c.spillover.ridge);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m, {"num_layers", "hidden_dim", "k_max"}, "model");
        detail::read_key(m, "num_layers", c.model.num_layers);
        detail::read_key(m, "hidden_dim", c.model.hidden_dim);
        detail::read_key(m, "k_max", c.model.k_max);
    }
    c.validate();
    return c;
}

/// Parses TOML into the equivalent JSON document.
inline nlohmann::json toml_to_json(const std::string& text, const std::string& source = "config")
{
    try {
        const toml::table tbl = toml::parse(text, source);
        std::ostringstream os;
        os << toml::json_formatter{tbl};
        return nlohmann::json::parse(os.str());
    } catch (const toml::parse_error& e) {
        std::ostringstream msg;
        msg << source << ": " << e.description() << " at line " << e.source().begin.line;
        throw ConfigError(msg.str());
    }
}

/// Reads a JSON or TOML document, chosen by extension (.toml, otherwise JSON).
inline nlohmann::json read_config_document(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    if (path.extension() == ".toml") return toml_to_json(ss.str(), path.string());
    try {
        return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline TrainConfig load_train_config(const std::filesystem::path& path)
{
    return train_config_from_json(read_config_document(path));
}

/// Chronological split of the union calendar into date ranges.
struct SplitPlan {
    DateRange train, val, test;
};

inline SplitPlan split_dates(const RVPanel& panel, double train_fraction, double val_fraction)
{
    const std::size_t T = panel.rows();
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(T) * train_fraction));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(T) * val_fraction));
    if (n_train == 0 || n_val == 0 || n_train + n_val >= T) throw DataError("panel too short to split");
    const auto& d = panel.dates();
    const Date end = add_days(d.back(), 1);
    return {{d.front(), d[n_train]}, {d[n_train], d[n_train + n_val]}, {d[n_train + n_val], end}};
}

/// Stride-1 windows over the whole panel: T - l - h + 1 of them. In
/// intersection mode the incomplete rows are dropped first.
inline std::vector<MaskedWindowPair> make_windows(const RVPanel& panel, const StandardizerStats& stats, std::size_t l,
                                                  std::size_t h, CalendarMode mode)
{
    const RVPanel working = mode == CalendarMode::Intersection ? intersection_calendar(panel) : panel;
    if (working.rows() < l + h) throw DataError("panel too short");
    std::vector<MaskedWindowPair> out;
    out.reserve(working.rows() - l - h + 1);
    for (std::size_t s = 0; s + l + h <= working.rows(); ++s) out.push_back(build_window_pair_at(working, stats, s, l, h));
    return out;
}

/// Window start rows in [first, last) whose inputs and targets stay inside.
inline std::vector<std::size_t> window_starts(std::size_t first, std::size_t last, std::size_t l, std::size_t h)
{
    std::vector<std::size_t> s;
    for (std::size_t r = first; r + l + h <= last; ++r) s.push_back(r);
    return s;
}

/// Everything the optimisation loop consumes, fixed before the first epoch.
struct TrainingSetup {
    TrainConfig config;
    RVPanel panel; ///< working calendar
    SplitPlan split;
    StandardizerStats stats;
    std::pair<std::size_t, std::size_t> train_rows, val_rows, test_rows;
    std::vector<std::size_t> train_starts, val_starts;
    Matrix split_graph;           ///< graph of the whole training split
    std::vector<Matrix> graphs;   ///< per window start row (empty when unused)
    std::size_t fallback_count = 0;
};

inline const Matrix& window_graph(const TrainingSetup& s, std::size_t start)
{
    return s.config.graph_mode == GraphMode::Static ? s.split_graph : s.graphs.at(start);
}

/// Graph for one look-back block.
inline AdjacencyEstimate lookback_graph(const Matrix& values, const Mask& observed, const SpilloverSettings& s)
{
    return batch_adjacency(values, observed, s);
}

inline TrainingSetup prepare_training(const TrainConfig& config, const RVPanel& panel)
{
    config.validate();
    TrainingSetup s;
    s.config = config;
    s.split = split_dates(panel, config.train_fraction, config.val_fraction);
    s.panel = config.calendar_mode == CalendarMode::Intersection ? intersection_calendar(panel) : panel;
    const std::size_t l = config.look_back, h = config.horizon;
    if (s.panel.rows() < l + h) throw DataError("panel too short");
    s.train_rows = s.panel.row_span(s.split.train);
    s.val_rows = s.panel.row_span(s.split.val);
    s.test_rows = s.panel.row_span(s.split.test);
    s.stats = fit_standardizer(s.panel, s.split.train);
    s.train_starts = window_starts(s.train_rows.first, s.train_rows.second, l, h);
    s.val_starts = window_starts(s.val_rows.first, s.val_rows.second, l, h);
    if (s.train_starts.empty()) throw DataError("empty training split: panel too short for look_back + horizon");
    if (s.val_starts.empty()) throw DataError("empty validation split: panel too short for look_back + horizon");

    const auto whole = panel_adjacency(s.panel, s.train_rows.first, s.train_rows.second, config.spillover);
    if (whole.fallback()) throw DataError("no spillover graph for the training split: " + whole.fallback_reason);
    s.split_graph = whole.graph->theta;

    if (config.graph_mode == GraphMode::Dynamic) {
        s.graphs.assign(s.panel.rows(), Matrix());
        std::vector<std::size_t> all = s.train_starts;
        all.insert(all.end(), s.val_starts.begin(), s.val_starts.end());
        // chronological, so "most recent valid" is well defined
        std::optional<Matrix> last_valid;
        for (std::size_t start : all) {
            const auto est = panel_adjacency(s.panel, start, start + l, config.spillover);
            if (est.fallback()) {
                ++s.fallback_count;
                s.graphs[start] = last_valid ? *last_valid : s.split_graph;
            } else {
                s.graphs[start] = est.graph->theta;
                last_valid = est.graph->theta;
            }
        }
    }
    return s;
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> step_size;
    std::size_t best_epoch = 0; ///< 1-based
    bool stopped_early = false;
    std::size_t fallback_count = 0;
    double wall_clock_seconds = 0.0;

    std::size_t epochs() const { return train_loss.size(); }
};

inline void write_history_csv(std::ostream& out, const TrainHistory& h)
{
    out << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < h.epochs(); ++e)
        out << (e + 1) << ',' << format_double(h.train_loss[e]) << ',' << format_double(h.val_loss[e]) << '\n';
}

/// Summary without wall-clock time, so reruns compare byte for byte.
inline nlohmann::json to_json(const TrainHistory& h)
{
    return {{"epochs", h.epochs()},
            {"best_epoch", h.best_epoch},
            {"best_val_loss", h.best_epoch ? h.val_loss[h.best_epoch - 1] : std::numeric_limits<double>::quiet_NaN()},
            {"stopped_early", h.stopped_early},
            {"adjacency_fallbacks", h.fallback_count},
            {"train_loss", h.train_loss},
            {"val_loss", h.val_loss},
            {"step_size", h.step_size}};
}

/// Patience-based stopping on a loss that should decrease.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Records one epoch; true when training should stop now.
    bool update(double loss)
    {
        ++epoch_;
        if (loss < best_) {
            best_ = loss;
            best_epoch_ = epoch_;
            bad_ = 0;
            return false;
        }
        ++bad_;
        return patience_ > 0 && bad_ >= patience_;
    }

    bool improved_last() const { return best_epoch_ == epoch_; }
    std::size_t best_epoch() const { return best_epoch_; }
    std::size_t bad_epochs() const { return bad_; }
    double best() const { return best_; }

private:
    std::size_t patience_;
    std::size_t epoch_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t bad_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct TrainResult {
    DCGRUModel model;
    TrainHistory history;
    TrainingSetup setup;
};

inline double window_loss(const DCGRUModel& m, const TrainingSetup& s, std::size_t start)
{
    const auto w = build_window_pair_at(s.panel, s.stats, start, s.config.look_back, s.config.horizon);
    const auto out = seq2seq_forward(m, w, masked_graphs(window_graph(s, start), w.adjacency_masks));
    return masked_mae(out.y_hat, w.y, w.ey);
}

inline double mean_loss(const DCGRUModel& m, const TrainingSetup& s, const std::vector<std::size_t>& starts)
{
    double sum = 0.0;
    for (std::size_t st : starts) sum += window_loss(m, s, st);
    return sum / static_cast<double>(starts.size());
}

/// Optional per-epoch observer: (epoch, train loss, validation loss).
using EpochCallback = std::function<void(std::size_t, double, double)>;

/// Mini-batch Adam on the masked MAE with early stopping; returns the
/// parameters of the best validation epoch.
inline TrainResult train(const TrainingSetup& setup, const EpochCallback& on_epoch = {})
{
    const auto& cfg = setup.config;
    const auto t0 = std::chrono::steady_clock::now();
    TrainResult res;
    res.setup = setup;
    DCGRUModel model = init_model(cfg.model, cfg.seed);
    Vector params = flatten(model);
    AdamState adam;
    double lr = cfg.step_size;
    const std::size_t halve_after = std::max<std::size_t>(1, cfg.patience / 2);
    std::size_t plateau = 0;
    EarlyStopper stopper(cfg.patience);
    DCGRUModel best = model;
    const CounterRng shuffle_root(cfg.seed, 0x73687566ULL);
    std::vector<std::size_t> order = setup.train_starts;
    DCGRUModel grad;

    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        std::sort(order.begin(), order.end());
        CounterRng rng = shuffle_root.substream(epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

        double epoch_loss = 0.0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += cfg.batch_size) {
            const std::size_t b1 = std::min(order.size(), b0 + cfg.batch_size);
            Vector gsum = Vector::Zero(params.size());
            for (std::size_t i = b0; i < b1; ++i) {
                const std::size_t start = order[i];
                const auto w = build_window_pair_at(setup.panel, setup.stats, start, cfg.look_back, cfg.horizon);
                const double loss =
                    loss_and_gradient(model, w, masked_graphs(window_graph(setup, start), w.adjacency_masks), grad);
                if (!std::isfinite(loss))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", window starting " +
                                       format_date(w.window_start));
                epoch_loss += loss;
                gsum += flatten(grad);
            }
            adam_step(params, gsum / static_cast<double>(b1 - b0), adam, lr);
            assign_flat(model, params);
        }
        const double train_loss = epoch_loss / static_cast<double>(order.size());
        const double val_loss = mean_loss(model, setup, setup.val_starts);
        if (!std::isfinite(val_loss)) throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch + 1));
        res.history.train_loss.push_back(train_loss);
        res.history.val_loss.push_back(val_loss);
        res.history.step_size.push_back(lr);
        if (on_epoch) on_epoch(epoch + 1, train_loss, val_loss);

        const bool stop = stopper.update(val_loss);
        if (stopper.improved_last()) {
            best = model;
            plateau = 0;
        } else if (++plateau >= halve_after) {
            lr *= 0.5;
            plateau = 0;
        }
        if (stop) {
            res.history.stopped_early = true;
            break;
        }
    }
    res.history.best_epoch = stopper.best_epoch();
    res.history.fallback_count = setup.fallback_count;
    res.model = std::move(best);
    res.history.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

inline TrainResult train(const TrainConfig& config, const RVPanel& panel, const EpochCallback& on_epoch = {})
{
    return train(prepare_training(config, panel), on_epoch);
}

/// Wraps a trained model for iterated forecasting on the RV^{1/2} scale.
/// Dynamic mode estimates the graph from each look-back block and falls back
/// to `fallback_graph` when that is impossible.
class DcrnnForecaster : public Forecaster {
public:
    DcrnnForecaster(DCGRUModel model, StandardizerStats stats, GraphMode mode, Matrix fallback_graph,
                    SpilloverSettings spillover)
        : model_(std::move(model)), stats_(std::move(stats)), mode_(mode), fallback_(std::move(fallback_graph)),
          spillover_(spillover)
    {
    }

    Matrix forecast(const Matrix& lookback, const Mask& observed, const Mask& future) const override
    {
        const auto L = lookback.rows();
        const auto H = future.rows();
        const auto N = lookback.cols();
        MaskedWindowPair w;
        w.x = Matrix::Zero(L, N);
        w.ex = observed.cast<double>();
        w.ey = future.cast<double>();
        w.y = Matrix::Zero(H, N);
        for (Eigen::Index t = 0; t < L; ++t)
            for (Eigen::Index n = 0; n < N; ++n)
                if (observed(t, n)) w.x(t, n) = stats_.standardize(lookback(t, n), n);
        for (Eigen::Index t = 0; t < L; ++t) w.adjacency_masks.push_back(adjacency_mask(observed.row(t)));
        for (Eigen::Index t = 0; t < H; ++t) w.adjacency_masks.push_back(adjacency_mask(future.row(t)));
        Matrix graph = fallback_;
        if (mode_ == GraphMode::Dynamic) {
            const auto est = lookback_graph(lookback, observed, spillover_);
            if (!est.fallback()) graph = est.graph->theta;
        }
        const auto out = seq2seq_forward(model_, w, masked_graphs(graph, w.adjacency_masks));
        Matrix f(H, N);
        for (Eigen::Index t = 0; t < H; ++t)
            for (Eigen::Index n = 0; n < N; ++n) f(t, n) = stats_.destandardize(out.y_hat(t, n), n);
        return f;
    }

private:
    DCGRUModel model_;
    StandardizerStats stats_;
    GraphMode mode_;
    Matrix fallback_;
    SpilloverSettings spillover_;
};

inline DcrnnForecaster make_forecaster(const TrainResult& r)
{
    return DcrnnForecaster(r.model, r.setup.stats, r.setup.config.graph_mode, r.setup.split_graph, r.setup.config.spillover);
}

/// Iterated forecast over the test split of the working calendar. The first
/// look-back is the last l rows before the test split.
inline IteratedSeries test_forecast(const Forecaster& f, const TrainingSetup& s)
{
    const std::size_t l = s.config.look_back;
    const auto [first, last] = s.test_rows;
    if (first < l) throw DataError("not enough history before the test split");
    return iterated_forecast(f, s.panel, first - l, last, l, s.config.horizon);
}

} // namespace volnet
