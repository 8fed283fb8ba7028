#include "volnet/pipeline.hpp"
#include "volnet/synth.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

using namespace volnet;
namespace fs = std::filesystem;

namespace {

RVPanel panel(std::size_t t, std::uint64_t seed)
{
    SynthSpec s;
    s.n = 3;
    s.t = t;
    s.phi = {block_phi({0, 0, 1}, 0.5, 0.2)};
    s.sigma = Matrix::Identity(3, 3);
    s.mean = 4.0;
    s.seed = seed;
    s.holidays = {0.04, 0.03, 0.05};
    return generate_panel(s);
}

CompareConfig quick_compare()
{
    CompareConfig c;
    c.train.max_epochs = 1;
    c.train.batch_size = 64;
    c.train.spillover.p = 1;
    c.train.model = {1, 4, 2};
    c.gnnhar.epochs = 20;
    c.mcs.replications = 100;
    return c;
}

fs::path scratch(const std::string& name)
{
    const fs::path p = fs::temp_directory_path() / ("volnet_pipeline_" + name);
    fs::remove_all(p);
    return p;
}

Table read_file(const fs::path& p)
{
    std::ifstream in(p);
    return read_csv(in);
}

} // namespace

TEST(HarForecaster, OneStepMatchesRuleAndIterates)
{
    CounterRng rng(1);
    Matrix v(100, 2);
    for (Eigen::Index t = 0; t < v.rows(); ++t) v.row(t) << rng.uniform(1.0, 2.0), rng.uniform(2.0, 3.0);
    HARCoefficients c = fit_vhar(v);
    c.alpha << 0.1, 0.2;
    const HarForecaster f(c);
    const Matrix look = v.topRows(30);
    const Mask obs = Mask::Constant(30, 2, true);
    const Matrix one = f.forecast(look, obs, Mask::Constant(1, 2, true));
    EXPECT_TRUE(one.row(0).transpose().isApprox(forecast_har(c, look), 1e-15));

    const Matrix three = f.forecast(look, obs, Mask::Constant(3, 2, true));
    Matrix hist(32, 2);
    hist.topRows(30) = look;
    hist.row(30) = forecast_har(c, hist.topRows(30)).transpose();
    hist.row(31) = forecast_har(c, hist.topRows(31)).transpose();
    EXPECT_TRUE(three.row(2).transpose().isApprox(forecast_har(c, hist), 1e-14));
    EXPECT_TRUE(three.row(0).isApprox(one.row(0)));

    Mask gap = obs;
    gap(29, 1) = false;
    EXPECT_THROW(f.forecast(look, gap, Mask::Constant(1, 2, true)), DataError);
}

TEST(Tables, CsvRoundTrip)
{
    Table t{{"index", "a", "b"}, {{"X", "0.1", "1e-05"}, {"Y", "2", "3.25"}}};
    std::stringstream ss;
    write_csv(ss, t);
    const Table r = read_csv(ss);
    EXPECT_EQ(r.header, t.header);
    EXPECT_EQ(r.rows, t.rows);
    std::stringstream bad("a,b\n1\n");
    EXPECT_THROW(read_csv(bad), DataError);
}

TEST(Tables, LossSeriesReader)
{
    std::stringstream a("loss\n0.5\n1.25\n\n2\n");
    EXPECT_EQ(read_loss_series(a), (std::vector<double>{0.5, 1.25, 2.0}));
    std::stringstream b("2000-01-03,0.1\n2000-01-04,0.2\n");
    EXPECT_EQ(read_loss_series(b), (std::vector<double>{0.1, 0.2}));
    std::stringstream c("x\n0.1\noops\n");
    EXPECT_THROW(read_loss_series(c), DataError);
}

TEST(Compare, EmptyModelList)
{
    CompareConfig c;
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_STREQ(e.what(), "no models");
    }
    EXPECT_THROW(compare_config_from_json(nlohmann::json{{"models", {"har", "lstm"}}}), ConfigError);
}

TEST(Compare, ConfigJsonRoundTrip)
{
    CompareConfig c = quick_compare();
    c.models = {"har", "ghar"};
    c.grid = {{100, 1}, {250, 5}};
    const CompareConfig r = compare_config_from_json(to_json(c));
    EXPECT_EQ(to_json(r).dump(), to_json(c).dump());
}

TEST(Compare, TwoNetworkModelsGiveOneMafeAndOneDmTable)
{
    CompareConfig c = quick_compare();
    c.models = {"dcrnn-rv", "stg-spillover"};
    c.grid = {{100, 1}};
    const RVPanel p = panel(1200, 1);
    const fs::path out = scratch("two");
    compare_pipeline(c, p, out);
    ASSERT_TRUE(fs::is_directory(out / "l100_h1"));
    const Table m = read_file(out / "l100_h1" / "mafe.csv");
    EXPECT_EQ(m.header, (std::vector<std::string>{"index", "dcrnn-rv", "stg-spillover"}));
    EXPECT_EQ(m.rows.size(), 3u);
    for (const auto& row : m.rows) EXPECT_GT(parse_double(row[1]), 0.0);
    const Table d = read_file(out / "l100_h1" / "dm.csv");
    EXPECT_EQ(d.rows.size(), 3u);
    const Table s = read_file(out / "l100_h1" / "mcs.csv");
    EXPECT_EQ(s.rows.size(), 6u);
    std::ifstream js(out / "l100_h1" / "report.json");
    const auto j = nlohmann::json::parse(js);
    EXPECT_EQ(j.at("models").size(), 2u);
    fs::remove_all(out);
}

TEST(Compare, FullGridGivesTwelveReportDirectories)
{
    CompareConfig c = quick_compare();
    c.models = {"har", "vhar"};
    c.grid.clear();
    for (std::size_t l : {100, 250, 500})
        for (std::size_t h : {1, 5, 10, 22}) c.grid.emplace_back(l, h);
    const RVPanel p = panel(3000, 2);
    const fs::path out = scratch("grid");
    compare_pipeline(c, p, out);
    std::size_t dirs = 0;
    for (const auto& e : fs::directory_iterator(out)) dirs += e.is_directory();
    EXPECT_EQ(dirs, 12u);
    EXPECT_TRUE(fs::exists(out / "l500_h22" / "mafe.csv"));
    fs::remove_all(out);
}

TEST(Compare, AllHarFamilyModelsRun)
{
    CompareConfig c = quick_compare();
    c.models = {"har", "vhar", "har-ks", "ghar", "gnnhar"};
    c.grid = {{30, 5}};
    const RVPanel p = panel(900, 3);
    std::vector<IteratedSeries> s;
    TrainConfig tc = c.train;
    tc.look_back = 30;
    tc.horizon = 5;
    for (const auto& m : c.models) s.push_back(model_test_forecast(m, p, tc, c.gnnhar));
    const CellReport r = compare_series(c.models, s, p.indices(), 30, 5, c.mcs);
    EXPECT_TRUE(r.mafe.allFinite());
    EXPECT_EQ(r.dm.size() + r.notes.size(), 3u * 10u + 0u);
    EXPECT_EQ(r.mcs.size(), 3u);
    // same intersection calendar and fit sample: forecasts share dates
    EXPECT_EQ(s[0].dates, s[4].dates);
}

TEST(Bundle, JsonRoundTripReproducesForecastsBitwise)
{
    const RVPanel p = panel(500, 4);
    TrainConfig tc = quick_compare().train;
    tc.look_back = 40;
    const TrainResult r = train(tc, p);
    const ModelBundle b = make_bundle(r);
    const ModelBundle back = bundle_from_json(nlohmann::json::parse(to_json(b).dump()));
    const IteratedSeries a = bundle_test_forecast(b, p);
    const IteratedSeries c = bundle_test_forecast(back, p);
    ASSERT_EQ(a.forecast.size(), c.forecast.size());
    EXPECT_EQ(0, std::memcmp(a.forecast.data(), c.forecast.data(), sizeof(double) * static_cast<std::size_t>(a.forecast.size())));
    const IteratedSeries direct = test_forecast(make_forecaster(r), r.setup);
    EXPECT_TRUE(direct.forecast == a.forecast);
    EXPECT_THROW(bundle_from_json(nlohmann::json{{"format", "other"}}), DataError);
}

TEST(Bundle, SeriesPanelRoundTrip)
{
    const RVPanel p = panel(500, 5);
    TrainConfig tc = quick_compare().train;
    tc.look_back = 40;
    const IteratedSeries s = har_test_forecast("har", p, tc, {});
    const RVPanel fp = series_panel(s, p.indices());
    std::stringstream ss;
    write_panel(ss, fp);
    const RVPanel back = load_panel(ss);
    EXPECT_EQ(back.dates(), s.dates);
    EXPECT_TRUE(back.values() == fp.values());
}
