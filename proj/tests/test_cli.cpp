#include "volnet/cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace volnet;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args)
{
    std::ostringstream o, e;
    const int code = cli::run(std::move(args), {o, e});
    return {code, o.str(), e.str()};
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir_ = fs::temp_directory_path() / ("volnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        ::unsetenv(cli::kSeedEnv);
    }
    void TearDown() override
    {
        fs::remove_all(dir_);
        ::unsetenv(cli::kSeedEnv);
    }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    std::string make_panel(std::size_t t = 700, std::uint64_t seed = 1)
    {
        const auto r = run({"synth", "--preset", "regime-switching", "--t", std::to_string(t), "--seed", std::to_string(seed),
                            "--out", path("data/panel.csv")});
        EXPECT_EQ(r.code, 0) << r.err;
        return path("data/panel.csv");
    }

    void write(const std::string& name, const std::string& text) const
    {
        fs::create_directories((dir_ / name).parent_path());
        std::ofstream(dir_ / name) << text;
    }

    fs::path dir_;
};

nlohmann::json read_json(const std::string& p)
{
    std::ifstream in(p);
    return nlohmann::json::parse(in);
}

} // namespace

TEST(Sha256, KnownDigests)
{
    EXPECT_EQ(cli::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_F(CliTest, UsageErrorsExitTwo)
{
    EXPECT_EQ(run({}).code, 2);
    EXPECT_EQ(run({"frobnicate"}).code, 2);
    const auto r = run({"spillover", "--input", "x.csv", "--bogus"});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
    EXPECT_EQ(run({"compare", "--h", "5"}).code, 2);
    EXPECT_EQ(run({"--help"}).code, 0);
}

TEST_F(CliTest, MissingInputExitsOneWithOneLine)
{
    const auto r = run({"spillover", "--input", path("nope.csv"), "--out", path("g.json")});
    EXPECT_EQ(r.code, 1);
    EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
    EXPECT_EQ(r.err.rfind("error: ", 0), 0u);
}

TEST_F(CliTest, SpilloverWritesRowStochasticGraph)
{
    const std::string panel = make_panel();
    const auto r = run({"spillover", "--input", panel, "--p", "3", "--horizon", "10", "--keep", "0.5", "--out", path("out/graph.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto g = read_json(path("out/graph.json"));
    for (const auto& row : g.at("theta")) {
        double s = 0.0;
        for (const auto& x : row) s += x.get<double>();
        EXPECT_NEAR(s, 1.0, 1e-10);
    }
    double net = 0.0;
    for (const auto& [k, v] : g.at("net").items()) net += v.get<double>();
    EXPECT_NEAR(net, 0.0, 1e-9);
    std::size_t nonzero = 0;
    for (const auto& row : g.at("adjacency"))
        for (const auto& x : row) nonzero += x.get<double>() != 0.0;
    EXPECT_EQ(nonzero, 8u + 28u);
    EXPECT_TRUE(fs::exists(path("out/graph.edges.csv")));
    EXPECT_TRUE(fs::exists(path("out/manifest.json")));
}

TEST_F(CliTest, TrainRejectsLookBackBeyondPanel)
{
    make_panel(300);
    write("run.toml", "input = \"data/panel.csv\"\nlook_back = 400\n");
    const auto r = run({"train", "--config", path("run.toml")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("panel too short"), std::string::npos);
}

TEST_F(CliTest, ConfigErrorsExitOne)
{
    make_panel(300);
    write("run.json", R"({"input": "data/panel.csv", "lookback": 50})");
    EXPECT_EQ(run({"train", "--config", path("run.json")}).code, 1);
    write("cmp.json", R"({"models": [], "input": "data/panel.csv"})");
    const auto r = run({"compare", "--config", path("cmp.json"), "--out", path("cmp")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("no models"), std::string::npos);
}

TEST_F(CliTest, CompareLossesDm)
{
    std::string a = "loss\n", b = "loss\n";
    CounterRng rng(5);
    for (int t = 0; t < 200; ++t) {
        a += format_double(std::abs(rng.normal())) + "\n";
        b += format_double(std::abs(rng.normal()) + 0.2) + "\n";
    }
    write("a.csv", a);
    write("b.csv", b);
    const auto r = run({"compare", "--losses", path("a.csv"), path("b.csv"), "--test", "dm", "--h", "5", "--out", path("dm.json")});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto j = read_json(path("dm.json"));
    EXPECT_LT(j.at("statistic").get<double>(), 0.0);
    EXPECT_GE(j.at("p_value").get<double>(), 0.0);
    EXPECT_EQ(j.at("horizon").get<int>(), 5);

    const auto m = run({"compare", "--losses", path("a.csv"), path("b.csv"), "--test", "mcs", "--replications", "200",
                        "--out", path("mcs.json")});
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_EQ(read_json(path("mcs.json")).at("p_values").size(), 2u);
}

TEST_F(CliTest, TrainForecastEvaluateChain)
{
    make_panel(700);
    write("run.toml", "input = \"data/panel.csv\"\nout = \"runs/a\"\nlook_back = 40\nmax_epochs = 2\n"
                      "[model]\nnum_layers = 1\nhidden_dim = 4\n[spillover]\np = 1\n");
    auto r = run({"train", "--config", path("run.toml")});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"model.json", "history.csv", "history.json", "manifest.json"}) EXPECT_TRUE(fs::exists(path(std::string("runs/a/") + f)));
    r = run({"forecast", "--model", path("runs/a/model.json"), "--input", path("data/panel.csv"), "--out", path("fc/forecast.csv")});
    ASSERT_EQ(r.code, 0) << r.err;
    r = run({"evaluate", "--input", path("data/panel.csv"), "--forecast", path("fc/forecast.csv"), "--out", path("ev")});
    ASSERT_EQ(r.code, 0) << r.err;
    std::ifstream in(path("ev/mafe.csv"));
    const Table t = read_csv(in);
    EXPECT_EQ(t.rows.size(), 8u);
    for (const auto& row : t.rows) EXPECT_GT(parse_double(row[2]), 0.0);
    std::ifstream ls(path("ev/losses.csv"));
    EXPECT_FALSE(read_loss_series(ls).empty());
}

TEST_F(CliTest, SeedEnvironmentOverridesConfig)
{
    write("spec.json", R"({"n": 2, "t": 50, "phi": [[0.5, 0.0], [0.1, 0.4]], "mean": 3.0, "seed": 1})");
    ASSERT_EQ(run({"synth", "--config", path("spec.json"), "--out", path("a/p.csv")}).code, 0);
    ::setenv(cli::kSeedEnv, "9", 1);
    ASSERT_EQ(run({"synth", "--config", path("spec.json"), "--out", path("b/p.csv")}).code, 0);
    EXPECT_EQ(read_json(path("b/manifest.json")).at("seed").get<int>(), 9);
    ASSERT_EQ(run({"synth", "--config", path("spec.json"), "--seed", "1", "--out", path("c/p.csv")}).code, 0);
    ::unsetenv(cli::kSeedEnv);
    EXPECT_NE(cli::sha256_file(path("a/p.csv")), cli::sha256_file(path("b/p.csv")));
    EXPECT_EQ(cli::sha256_file(path("a/p.csv")), cli::sha256_file(path("c/p.csv")));
    ::setenv(cli::kSeedEnv, "x1", 1);
    EXPECT_EQ(run({"synth", "--config", path("spec.json"), "--out", path("d/p.csv")}).code, 1);
}

TEST_F(CliTest, ManifestRecordsDigests)
{
    const std::string panel = make_panel(300);
    ASSERT_EQ(run({"stats", "--input", panel, "--out", path("st")}).code, 0);
    const auto m = read_json(path("st/manifest.json"));
    EXPECT_EQ(m.at("command"), "stats");
    EXPECT_EQ(m.at("version"), cli::kToolVersion);
    EXPECT_EQ(m.at("inputs").at(0).at("sha256"), cli::sha256_file(panel));
    EXPECT_EQ(m.at("outputs").size(), 2u);
    for (const auto& o : m.at("outputs")) EXPECT_EQ(o.at("sha256"), cli::sha256_file(path("st/" + o.at("path").get<std::string>())));
    EXPECT_TRUE(m.contains("wall_clock_seconds"));
}

TEST_F(CliTest, ReplayReproducesOutputs)
{
    const std::string panel = make_panel(500);
    ASSERT_EQ(run({"spillover", "--input", panel, "--p", "2", "--out", path("sp/graph.json")}).code, 0);
    auto r = run({"replay", "--manifest", path("sp/manifest.json"), "--out", path("again")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NE(r.out.find("2 output files identical"), std::string::npos);
    // the synth run itself replays too
    r = run({"replay", "--manifest", path("data/manifest.json"), "--out", path("again_synth")});
    ASSERT_EQ(r.code, 0) << r.err;
    // a changed input is refused
    std::ofstream(panel, std::ios::app) << "\n";
    r = run({"replay", "--manifest", path("sp/manifest.json"), "--out", path("third")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("input changed"), std::string::npos);
}

TEST_F(CliTest, ReplayDetectsTamperedOutput)
{
    const std::string panel = make_panel(400);
    ASSERT_EQ(run({"stats", "--input", panel, "--out", path("st")}).code, 0);
    auto m = read_json(path("st/manifest.json"));
    m["outputs"][0]["sha256"] = std::string(64, '0');
    std::ofstream(path("st/manifest.json")) << m.dump();
    const auto r = run({"replay", "--manifest", path("st/manifest.json"), "--out", path("again")});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("replay differs"), std::string::npos);
}
