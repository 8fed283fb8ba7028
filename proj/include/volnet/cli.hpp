#pragma once

/// @file
/// The `volnet` command line: argument parsing, subcommands and run
/// manifests. `run` is the whole program minus `main`.

#include "volnet/core.hpp"
#include "volnet/evaluation.hpp"
#include "volnet/panel.hpp"
#include "volnet/pipeline.hpp"
#include "volnet/spillover.hpp"
#include "volnet/synth.hpp"
#include "volnet/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace volnet::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kSeedEnv = "VOLNET_SEED";

inline std::string sha256_hex(const std::string& bytes)
{
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
        throw Error("SHA-256 failed");
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

inline std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot open " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

/// Collects what a command read and wrote, then writes manifest.json into
/// the output directory.
class RunRecord {
public:
    RunRecord(std::string command, std::vector<std::string> argv)
        : command_(std::move(command)), argv_(std::move(argv)), start_(std::chrono::steady_clock::now())
    {
    }

    void input(const fs::path& p) { inputs_.push_back({fs::absolute(p).lexically_normal().string(), sha256_file(p)}); }
    void config(nlohmann::json j) { config_ = std::move(j); }
    void seed(std::uint64_t s) { seed_ = s; }
    void output(const fs::path& p) { outputs_.push_back(p); }

    /// `out_arg` is the --out value as given; `dir` holds every output.
    void write(const fs::path& dir, const std::string& out_kind, const std::string& out_arg) const
    {
        nlohmann::json in = nlohmann::json::array();
        for (const auto& [path, digest] : inputs_) in.push_back({{"path", path}, {"sha256", digest}});
        nlohmann::json out = nlohmann::json::array();
        for (const auto& p : outputs_)
            out.push_back({{"path", fs::relative(p, dir).generic_string()}, {"sha256", sha256_file(p)}});
        nlohmann::json m = {{"tool", "volnet"},
                            {"version", kToolVersion},
                            {"command", command_},
                            {"argv", argv_},
                            {"cwd", fs::current_path().string()},
                            {"out", {{"kind", out_kind}, {"value", out_arg}}},
                            {"config", config_},
                            {"inputs", in},
                            {"outputs", out},
                            {"wall_clock_seconds",
                             std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()}};
        if (seed_) m["seed"] = *seed_;
        if (const char* env = std::getenv(kSeedEnv)) m["seed_env"] = env;
        write_text(dir / "manifest.json", m.dump(2) + "\n");
    }

private:
    std::string command_;
    std::vector<std::string> argv_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<fs::path> outputs_;
    nlohmann::json config_ = nlohmann::json::object();
    std::optional<std::uint64_t> seed_;
};

/// --seed beats VOLNET_SEED, which beats the configured seed.
inline std::uint64_t resolve_seed(std::uint64_t configured, const std::optional<std::uint64_t>& flag)
{
    if (flag) return *flag;
    if (const char* env = std::getenv(kSeedEnv)) {
        try {
            std::size_t used = 0;
            const std::string s(env);
            const auto v = std::stoull(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(std::string(kSeedEnv) + " must be a non-negative integer");
        }
    }
    return configured;
}

inline RVPanel read_panel(const fs::path& p, RunRecord& rec, bool raw_variance = false)
{
    std::ifstream in(p);
    if (!in) throw DataError("cannot open " + p.string());
    rec.input(p);
    LoadOptions o;
    o.raw_variance = raw_variance;
    return load_panel(in, o);
}

/// Config documents may name the input panel and output location next to
/// the model settings; relative paths resolve against the config file.
struct ConfigDocument {
    nlohmann::json body;
    std::optional<fs::path> input, out;
};

inline ConfigDocument read_config(const fs::path& p, RunRecord& rec)
{
    rec.input(p);
    ConfigDocument d;
    d.body = read_config_document(p);
    const fs::path base = p.parent_path();
    for (const char* key : {"input", "out"}) {
        if (!d.body.is_object() || !d.body.contains(key)) continue;
        const fs::path v = d.body.at(key).get<std::string>();
        (std::string(key) == "input" ? d.input : d.out) = v.is_absolute() ? v : base / v;
        d.body.erase(key);
    }
    return d;
}

inline fs::path output_dir_of_file(const fs::path& file)
{
    const fs::path parent = file.parent_path();
    return parent.empty() ? fs::path(".") : parent;
}

struct Io {
    std::ostream& out;
    std::ostream& err;
};

// ---- stats ---------------------------------------------------------------

inline int cmd_stats(const fs::path& input, const fs::path& out, bool raw, std::size_t omega_threshold, RunRecord& rec)
{
    const RVPanel p = read_panel(input, rec, raw);
    fs::create_directories(out);
    const auto N = p.cols();
    std::optional<Vector> om;
    if (N > 1) om = omega(p, std::min(omega_threshold, N - 1));
    Table t;
    t.header = {"index", "count", "mean", "std", "skewness", "excess_kurtosis", "adf_stat", "adf_p", "adf_lags", "omega"};
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<double> x;
        for (std::size_t r = 0; r < p.rows(); ++r)
            if (p.observed()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n)))
                x.push_back(p.values()(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(n)));
        const DescriptiveStats d = descriptive_stats(x);
        const ADFResult a = adf_test(x);
        const std::string name = p.indices()[n];
        const std::string w = om ? format_double((*om)(static_cast<Eigen::Index>(n))) : "";
        t.rows.push_back({name, std::to_string(d.count), format_double(d.mean), format_double(d.stddev),
                          format_double(d.skewness), format_double(d.excess_kurtosis), format_double(a.statistic),
                          format_double(a.p_value), std::to_string(a.lags), w});
        j[name] = {{"count", d.count},       {"mean", d.mean},       {"std", d.stddev},
                   {"skewness", d.skewness}, {"excess_kurtosis", d.excess_kurtosis},
                   {"adf", {{"statistic", a.statistic}, {"p_value", a.p_value}, {"lags", a.lags}, {"nobs", a.nobs}}}};
        if (om) j[name]["omega"] = (*om)(static_cast<Eigen::Index>(n));
    }
    write_table(out / "stats.csv", t);
    write_text(out / "stats.json", j.dump(2) + "\n");
    rec.output(out / "stats.csv");
    rec.output(out / "stats.json");
    rec.config({{"raw_variance", raw}, {"omega_threshold", omega_threshold}});
    rec.write(out, "dir", out.string());
    return 0;
}

// ---- spillover -----------------------------------------------------------

inline int cmd_spillover(const fs::path& input, const fs::path& out, const SpilloverSettings& s, bool raw, RunRecord& rec)
{
    const RVPanel p = read_panel(input, rec, raw);
    SpilloverSettings dense = s;
    dense.keep_fraction = 1.0;
    const auto est = panel_adjacency(p, 0, p.rows(), dense);
    if (est.fallback()) throw DataError("cannot estimate spillover graph: " + est.fallback_reason);
    // theta and net spillovers use the full row-stochastic matrix; the
    // sparsified matrix is the adjacency handed to the network
    SpilloverGraph full = *est.graph;
    full.sparsified = false;
    full.keep_fraction = 1.0;
    const SpilloverGraph g = sparsify(full, s.keep_fraction);
    nlohmann::json j = to_json(full, p.indices());
    j["keep_fraction"] = s.keep_fraction;
    j["adjacency"] = to_json(g, p.indices()).at("theta");
    const Vector net = net_spillover(full);
    for (std::size_t n = 0; n < p.cols(); ++n) j["net"][p.indices()[n]] = net(static_cast<Eigen::Index>(n));
    j["common_rows"] = est.common_rows;
    const fs::path dir = output_dir_of_file(out);
    fs::create_directories(dir);
    write_text(out, j.dump(2) + "\n");
    const fs::path edges = dir / (out.stem().string() + ".edges.csv");
    std::ostringstream es;
    write_edge_list(es, g, p.indices());
    write_text(edges, es.str());
    rec.output(out);
    rec.output(edges);
    rec.config({{"p", s.p}, {"horizon", s.horizon}, {"keep_fraction", s.keep_fraction}, {"min_rows", s.min_rows},
                {"ridge", s.ridge}, {"raw_variance", raw}});
    rec.write(dir, "file", out.string());
    return 0;
}

// ---- train ---------------------------------------------------------------

struct TrainFlags {
    fs::path config, input, out;
    std::optional<std::uint64_t> seed;
    std::string graph_mode, calendar;
    bool raw = false;
};

inline int cmd_train(const TrainFlags& f, RunRecord& rec, const Io& io)
{
    TrainConfig cfg;
    std::optional<fs::path> input, out;
    if (!f.config.empty()) {
        const ConfigDocument d = read_config(f.config, rec);
        cfg = train_config_from_json(d.body);
        input = d.input;
        out = d.out;
    }
    if (!f.input.empty()) input = f.input;
    if (!f.out.empty()) out = f.out;
    if (!input) throw ConfigError("no input panel (use --input or an 'input' key in the config)");
    if (!out) out = fs::path("train_out");
    cfg.seed = resolve_seed(cfg.seed, f.seed);
    if (!f.graph_mode.empty()) cfg.graph_mode = parse_graph_mode(f.graph_mode);
    if (!f.calendar.empty()) cfg.calendar_mode = parse_calendar_mode(f.calendar);
    cfg.validate();
    rec.seed(cfg.seed);
    rec.config(to_json(cfg));
    const RVPanel p = read_panel(*input, rec, f.raw);
    const TrainResult r = train(cfg, p, [&](std::size_t e, double tl, double vl) {
        io.err << "epoch " << e << " train " << format_double(tl) << " val " << format_double(vl) << '\n';
    });
    fs::create_directories(*out);
    write_text(*out / "model.json", to_json(make_bundle(r)).dump() + "\n");
    std::ostringstream hs;
    write_history_csv(hs, r.history);
    write_text(*out / "history.csv", hs.str());
    write_text(*out / "history.json", to_json(r.history).dump(2) + "\n");
    for (const char* name : {"model.json", "history.csv", "history.json"}) rec.output(*out / name);
    rec.write(*out, "dir", out->string());
    return 0;
}

// ---- forecast ------------------------------------------------------------

inline int cmd_forecast(const fs::path& model, const fs::path& input, const fs::path& out, bool raw, RunRecord& rec)
{
    rec.input(model);
    const ModelBundle b = bundle_from_json([&] {
        try {
            return nlohmann::json::parse(read_file(model));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(model.string() + ": " + e.what());
        }
    }());
    const RVPanel p = read_panel(input, rec, raw);
    const IteratedSeries s = bundle_test_forecast(b, p);
    const fs::path dir = output_dir_of_file(out);
    fs::create_directories(dir);
    std::ostringstream os;
    write_panel(os, series_panel(s, p.indices()));
    write_text(out, os.str());
    rec.output(out);
    rec.config(to_json(b.config));
    rec.seed(b.config.seed);
    rec.write(dir, "file", out.string());
    return 0;
}

// ---- evaluate ------------------------------------------------------------

inline int cmd_evaluate(const fs::path& input, const fs::path& forecast, const fs::path& out, bool raw, RunRecord& rec)
{
    const RVPanel truth = read_panel(input, rec, raw);
    const RVPanel f = read_panel(forecast, rec);
    if (f.indices() != truth.indices()) throw DataError("forecast and panel indices differ");
    const auto N = static_cast<Eigen::Index>(truth.cols());
    Vector sum = Vector::Zero(N);
    std::vector<std::size_t> count(static_cast<std::size_t>(N), 0);
    Table losses;
    losses.header = {"date"};
    losses.header.insert(losses.header.end(), truth.indices().begin(), truth.indices().end());
    losses.header.push_back("loss");
    for (std::size_t r = 0; r < f.rows(); ++r) {
        const auto row = truth.find_row(f.dates()[r]);
        if (!row) throw DataError("forecast date " + format_date(f.dates()[r]) + " not in panel");
        std::vector<std::string> cells{format_date(f.dates()[r])};
        double total = 0.0;
        std::size_t k = 0;
        for (Eigen::Index n = 0; n < N; ++n) {
            const auto ri = static_cast<Eigen::Index>(r), ti = static_cast<Eigen::Index>(*row);
            if (f.observed()(ri, n) && truth.observed()(ti, n)) {
                const double e = std::abs(f.values()(ri, n) - truth.values()(ti, n));
                sum(n) += e;
                ++count[static_cast<std::size_t>(n)];
                total += e;
                ++k;
                cells.push_back(format_double(e));
            } else {
                cells.emplace_back();
            }
        }
        if (k == 0) continue;
        cells.push_back(format_double(total / static_cast<double>(k)));
        losses.rows.push_back(std::move(cells));
    }
    Table t;
    t.header = {"index", "count", "mafe"};
    nlohmann::json j = nlohmann::json::object();
    for (Eigen::Index n = 0; n < N; ++n) {
        const auto c = count[static_cast<std::size_t>(n)];
        if (c == 0) throw DataError("no overlapping observations for index " + truth.indices()[static_cast<std::size_t>(n)]);
        const double m = sum(n) / static_cast<double>(c);
        t.rows.push_back({truth.indices()[static_cast<std::size_t>(n)], std::to_string(c), format_double(m)});
        j[truth.indices()[static_cast<std::size_t>(n)]] = {{"count", c}, {"mafe", m}};
    }
    fs::create_directories(out);
    write_table(out / "mafe.csv", t);
    write_text(out / "mafe.json", j.dump(2) + "\n");
    write_table(out / "losses.csv", losses);
    for (const char* name : {"mafe.csv", "mafe.json", "losses.csv"}) rec.output(out / name);
    rec.write(out, "dir", out.string());
    return 0;
}

// ---- compare -------------------------------------------------------------

struct CompareFlags {
    fs::path config, input, out;
    std::vector<fs::path> losses;
    std::string test = "dm";
    std::size_t h = 1;
    double alpha = 0.1;
    std::size_t replications = 1000;
    std::size_t block_length = 0;
    std::size_t jobs = 1;
    std::optional<std::uint64_t> seed;
    bool raw = false;
};

inline int cmd_compare_losses(const CompareFlags& f, RunRecord& rec)
{
    std::vector<std::vector<double>> series;
    for (const auto& p : f.losses) {
        std::ifstream in(p);
        if (!in) throw DataError("cannot open " + p.string());
        rec.input(p);
        series.push_back(read_loss_series(in));
        if (series.back().empty()) throw DataError(p.string() + " holds no losses");
        if (series.back().size() != series.front().size()) throw DataError("loss series lengths differ");
    }
    const fs::path out = f.out.empty() ? fs::path(f.test + ".json") : f.out;
    nlohmann::json j;
    if (f.test == "dm") {
        if (series.size() != 2) throw ConfigError("dm needs exactly two loss files");
        std::vector<double> d(series[0].size());
        for (std::size_t t = 0; t < d.size(); ++t) d[t] = series[0][t] - series[1][t];
        j = to_json(dm_test_differential(d, f.h));
        j["files"] = {f.losses[0].string(), f.losses[1].string()};
        rec.config({{"test", "dm"}, {"h", f.h}});
    } else if (f.test == "mcs") {
        if (series.size() < 2) throw ConfigError("mcs needs at least two loss files");
        Matrix L(static_cast<Eigen::Index>(series[0].size()), static_cast<Eigen::Index>(series.size()));
        std::vector<std::string> names;
        for (std::size_t m = 0; m < series.size(); ++m) {
            names.push_back(f.losses[m].stem().string());
            for (std::size_t t = 0; t < series[m].size(); ++t)
                L(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(m)) = series[m][t];
        }
        MCSOptions o;
        o.alpha = f.alpha;
        o.replications = f.replications;
        o.block_length = f.block_length;
        o.seed = resolve_seed(0, f.seed);
        rec.seed(o.seed);
        j = to_json(mcs_test(L, names, o));
        rec.config({{"test", "mcs"}, {"alpha", o.alpha}, {"replications", o.replications}, {"block_length", o.block_length}});
    } else {
        throw ConfigError("--test must be dm or mcs");
    }
    const fs::path dir = output_dir_of_file(out);
    fs::create_directories(dir);
    write_text(out, j.dump(2) + "\n");
    rec.output(out);
    rec.write(dir, "file", out.string());
    return 0;
}

inline int cmd_compare_pipeline(const CompareFlags& f, RunRecord& rec)
{
    const ConfigDocument d = read_config(f.config, rec);
    CompareConfig cfg = compare_config_from_json(d.body);
    const auto input = !f.input.empty() ? std::optional<fs::path>(f.input) : d.input;
    const fs::path out = !f.out.empty() ? f.out : d.out.value_or(fs::path("compare_out"));
    if (!input) throw ConfigError("no input panel (use --input or an 'input' key in the config)");
    cfg.train.seed = resolve_seed(cfg.train.seed, f.seed);
    rec.seed(cfg.train.seed);
    rec.config(to_json(cfg));
    const RVPanel p = read_panel(*input, rec, f.raw);
    for (const auto& file : compare_pipeline(cfg, p, out, f.jobs)) rec.output(file);
    rec.write(out, "dir", out.string());
    return 0;
}

// ---- synth ---------------------------------------------------------------

inline int cmd_synth(const fs::path& config, const std::string& preset, std::size_t t, const fs::path& out,
                     const std::optional<std::uint64_t>& seed, RunRecord& rec)
{
    SynthSpec spec;
    if (!config.empty()) {
        const ConfigDocument d = read_config(config, rec);
        spec = synth_spec_from_json(d.body);
    } else if (preset == "regime-switching") {
        spec = regime_switching_spec(t, 0);
    } else {
        throw ConfigError("synth needs --config or --preset regime-switching");
    }
    spec.seed = resolve_seed(spec.seed, seed);
    if (preset == "regime-switching" && config.empty()) spec = regime_switching_spec(t, spec.seed);
    rec.seed(spec.seed);
    rec.config(to_json(spec));
    const RVPanel p = generate_panel(spec);
    const fs::path dir = output_dir_of_file(out);
    fs::create_directories(dir);
    std::ostringstream os;
    write_panel(os, p);
    write_text(out, os.str());
    rec.output(out);
    rec.write(dir, "file", out.string());
    return 0;
}

inline int run(std::vector<std::string> args, Io io);

// ---- replay --------------------------------------------------------------

/// Restores an environment variable on scope exit.
class ScopedEnv {
public:
    ScopedEnv(const char* name, const std::optional<std::string>& value) : name_(name)
    {
        if (const char* old = std::getenv(name)) old_ = old;
        if (value) ::setenv(name, value->c_str(), 1);
        else ::unsetenv(name);
    }
    ~ScopedEnv()
    {
        if (old_) ::setenv(name_, old_->c_str(), 1);
        else ::unsetenv(name_);
    }
    ScopedEnv(const ScopedEnv&) = delete;
    ScopedEnv& operator=(const ScopedEnv&) = delete;

private:
    const char* name_;
    std::optional<std::string> old_;
};

class ScopedCwd {
public:
    explicit ScopedCwd(const fs::path& p) : old_(fs::current_path()) { fs::current_path(p); }
    ~ScopedCwd() { fs::current_path(old_); }
    ScopedCwd(const ScopedCwd&) = delete;
    ScopedCwd& operator=(const ScopedCwd&) = delete;

private:
    fs::path old_;
};

inline std::vector<std::string> redirect_out(std::vector<std::string> argv, const std::string& value)
{
    for (std::size_t i = 0; i < argv.size(); ++i) {
        if (argv[i] == "--out" && i + 1 < argv.size()) {
            argv[i + 1] = value;
            return argv;
        }
        if (argv[i].rfind("--out=", 0) == 0) {
            argv[i] = "--out=" + value;
            return argv;
        }
    }
    argv.push_back("--out");
    argv.push_back(value);
    return argv;
}

/// Re-runs the recorded command into `target` and compares every output
/// digest with the manifest.
inline int cmd_replay(const fs::path& manifest_path, fs::path target, const Io& io)
{
    nlohmann::json m;
    try {
        m = nlohmann::json::parse(read_file(manifest_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    try {
        if (m.at("tool") != "volnet") throw DataError("not a volnet manifest");
        for (const auto& in : m.at("inputs")) {
            const fs::path p = in.at("path").get<std::string>();
            if (!fs::exists(p)) throw DataError("recorded input missing: " + p.string());
            if (sha256_file(p) != in.at("sha256").get<std::string>()) throw DataError("input changed since the run: " + p.string());
        }
        auto argv = m.at("argv").get<std::vector<std::string>>();
        if (!argv.empty() && argv.front() == "replay") throw ConfigError("cannot replay a replay");
        if (target.empty()) target = manifest_path.parent_path() / "replay";
        target = fs::absolute(target);
        const std::string kind = m.at("out").at("kind").get<std::string>();
        const std::string old_out = m.at("out").at("value").get<std::string>();
        const fs::path new_out = kind == "file" ? target / fs::path(old_out).filename() : target;
        argv = redirect_out(std::move(argv), new_out.string());
        std::optional<std::string> env;
        if (m.contains("seed_env")) env = m.at("seed_env").get<std::string>();
        int code = 0;
        {
            ScopedCwd cwd(m.at("cwd").get<std::string>());
            ScopedEnv seed(kSeedEnv, env);
            std::ostringstream sink;
            code = run(argv, {sink, io.err});
        }
        if (code != 0) throw DataError("replayed command failed with exit code " + std::to_string(code));
        std::size_t same = 0;
        std::vector<std::string> differ;
        for (const auto& o : m.at("outputs")) {
            const fs::path p = target / o.at("path").get<std::string>();
            if (fs::exists(p) && sha256_file(p) == o.at("sha256").get<std::string>()) ++same;
            else differ.push_back(o.at("path").get<std::string>());
        }
        if (!differ.empty()) {
            std::string list;
            for (const auto& d : differ) list += (list.empty() ? "" : ", ") + d;
            throw DataError("replay differs in " + list);
        }
        io.out << "replayed " << m.at("command").get<std::string>() << ": " << same << " output files identical\n";
        return 0;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed manifest: ") + e.what());
    }
}

// ---- dispatch ------------------------------------------------------------

/// Runs one command line (without the program name). Exit codes: 0 ok,
/// 1 data or configuration error, 2 usage error.
inline int run(std::vector<std::string> args, Io io)
{
    CLI::App app{"Realized-volatility panels, spillover graphs and graph-recurrent forecasts", "volnet"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    fs::path input, out, config, model, forecast, manifest;
    bool raw = false;
    std::optional<std::uint64_t> seed;
    std::uint64_t seed_value = 0;
    std::vector<CLI::Option*> seed_opts;
    auto add_raw = [&](CLI::App* c) { c->add_flag("--raw-variance", raw, "input holds RV rather than RV^{1/2}"); };

    auto* stats = app.add_subcommand("stats", "descriptive statistics, ADF tests and closure shares");
    std::size_t omega_threshold = 5;
    stats->add_option("--input", input, "panel CSV")->required();
    stats->add_option("--out", out, "output directory")->default_val("stats_out");
    stats->add_option("--omega-threshold", omega_threshold, "minimum number of other open markets")->default_val(5);
    add_raw(stats);

    auto* spill = app.add_subcommand("spillover", "estimate the spillover graph of a whole panel");
    SpilloverSettings ss;
    spill->add_option("--input", input, "panel CSV")->required();
    spill->add_option("--out", out, "graph JSON path")->default_val("graph.json");
    spill->add_option("--p", ss.p, "VAR lag order")->default_val(ss.p);
    spill->add_option("--horizon", ss.horizon, "decomposition horizon")->default_val(ss.horizon);
    spill->add_option("--keep", ss.keep_fraction, "fraction of off-diagonal edges kept")->default_val(ss.keep_fraction);
    spill->add_option("--min-rows", ss.min_rows, "minimum common rows (0: automatic)")->default_val(0);
    spill->add_option("--ridge", ss.ridge, "ridge added to the VAR normal equations")->default_val(ss.ridge);
    add_raw(spill);

    auto* tr = app.add_subcommand("train", "train a graph-recurrent forecaster");
    TrainFlags tf;
    tr->add_option("--config", tf.config, "JSON or TOML training config");
    tr->add_option("--input", tf.input, "panel CSV");
    tr->add_option("--out", tf.out, "output directory");
    seed_opts.push_back(tr->add_option("--seed", seed_value, "random seed"));
    tr->add_option("--graph-mode", tf.graph_mode, "dynamic or static")->check(CLI::IsMember({"dynamic", "static"}));
    tr->add_option("--calendar", tf.calendar, "union or intersection")->check(CLI::IsMember({"union", "intersection"}));
    add_raw(tr);

    auto* fc = app.add_subcommand("forecast", "iterated test-split forecasts from a trained model");
    fc->add_option("--model", model, "model.json written by train")->required();
    fc->add_option("--input", input, "panel CSV")->required();
    fc->add_option("--out", out, "forecast CSV")->default_val("forecast.csv");
    add_raw(fc);

    auto* ev = app.add_subcommand("evaluate", "forecast errors against a panel");
    ev->add_option("--input", input, "panel CSV")->required();
    ev->add_option("--forecast", forecast, "forecast CSV")->required();
    ev->add_option("--out", out, "output directory")->default_val("evaluate_out");
    add_raw(ev);

    auto* cmp = app.add_subcommand("compare", "model comparison runs or tests on loss series");
    CompareFlags cf;
    cmp->set_help_flag("--help", "print this help message and exit");
    cmp->add_option("--config", cf.config, "comparison config (JSON or TOML)");
    cmp->add_option("--input", cf.input, "panel CSV");
    cmp->add_option("--out", cf.out, "output directory, or result JSON with --losses");
    auto* losses_opt = cmp->add_option("--losses", cf.losses, "loss series files")->expected(2, -1);
    cmp->add_option("--test", cf.test, "dm or mcs")->check(CLI::IsMember({"dm", "mcs"}))->default_val("dm");
    cmp->add_option("--h", cf.h, "forecast horizon for dm")->default_val(1);
    cmp->add_option("--alpha", cf.alpha, "mcs size")->default_val(0.1);
    cmp->add_option("--replications", cf.replications, "mcs bootstrap replications")->default_val(1000);
    cmp->add_option("--block-length", cf.block_length, "mcs block length (0: automatic)")->default_val(0);
    cmp->add_option("--jobs", cf.jobs, "grid cells computed at once")->default_val(1);
    seed_opts.push_back(cmp->add_option("--seed", seed_value, "random seed"));
    add_raw(cmp);
    losses_opt->excludes("--config");

    auto* syn = app.add_subcommand("synth", "generate a synthetic panel");
    std::string preset;
    std::size_t synth_t = 3000;
    syn->add_option("--config", config, "SynthSpec JSON or TOML");
    syn->add_option("--preset", preset, "regime-switching")->check(CLI::IsMember({"regime-switching"}));
    syn->add_option("--t", synth_t, "rows for a preset")->default_val(3000);
    syn->add_option("--out", out, "panel CSV")->default_val("panel.csv");
    seed_opts.push_back(syn->add_option("--seed", seed_value, "random seed"));

    auto* rep = app.add_subcommand("replay", "re-run a recorded command and verify its outputs");
    rep->add_option("--manifest", manifest, "manifest.json of the original run")->required();
    rep->add_option("--out", out, "directory for the re-run (default: <manifest dir>/replay)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        io.out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        io.out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::CallForVersion&) {
        io.out << kToolVersion << '\n';
        return 0;
    } catch (const CLI::ParseError& e) {
        io.err << "error: " << e.what() << '\n';
        const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        io.err << sub->help();
        return 2;
    }

    for (const auto* o : seed_opts)
        if (o->count()) seed = seed_value;
    const std::string cmd = app.get_subcommands().front()->get_name();
    RunRecord rec(cmd, args);
    try {
        if (cmd == "stats") return cmd_stats(input, out, raw, omega_threshold, rec);
        if (cmd == "spillover") return cmd_spillover(input, out, ss, raw, rec);
        if (cmd == "train") {
            tf.seed = seed;
            tf.raw = raw;
            return cmd_train(tf, rec, io);
        }
        if (cmd == "forecast") return cmd_forecast(model, input, out, raw, rec);
        if (cmd == "evaluate") return cmd_evaluate(input, forecast, out, raw, rec);
        if (cmd == "compare") {
            cf.seed = seed;
            cf.raw = raw;
            if (!cf.losses.empty()) return cmd_compare_losses(cf, rec);
            if (cf.config.empty()) {
                io.err << "error: compare needs --losses or --config\n" << cmp->help();
                return 2;
            }
            return cmd_compare_pipeline(cf, rec);
        }
        if (cmd == "synth") return cmd_synth(config, preset, synth_t, out, seed, rec);
        if (cmd == "replay") return cmd_replay(manifest, out, io);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& c : msg)
            if (c == '\n') c = ' ';
        io.err << "error: " << msg << '\n';
        return 1;
    }
    return 2;
}

} // namespace volnet::cli
