// Acceptance runner: one line per criterion, non-zero exit if any fails.
// Usage: acceptance [criterion numbers...]

#include "support.hpp"
#include "volnet/cli.hpp"
#include "volnet/evaluation.hpp"
#include "volnet/har.hpp"
#include "volnet/spillover.hpp"
#include "volnet/synth.hpp"
#include "volnet/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

using namespace volnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

bool bitwise_equal(const Matrix& a, const Matrix& b)
{
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

std::string fmt(double x)
{
    std::ostringstream o;
    o.precision(3);
    o << x;
    return o.str();
}

// 1. GFEVD against the scalar N = 2 evaluation.
Outcome gfevd_correctness()
{
    CounterRng rng(1001);
    int cases = 0;
    double worst = 0.0, worst_sum = 0.0;
    while (cases < 100) {
        const std::size_t p = 1 + rng.below(3);
        std::vector<Matrix> phi;
        std::vector<std::array<double, 4>> flat;
        for (std::size_t k = 0; k < p; ++k) {
            Matrix m(2, 2);
            m << rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6);
            phi.push_back(m);
            flat.push_back({m(0, 0), m(0, 1), m(1, 0), m(1, 1)});
        }
        if (companion_spectral_radius(phi) >= 0.98) continue;
        const double a = rng.uniform(0.1, 3.0), b = rng.uniform(0.1, 3.0), r = rng.uniform(-0.95, 0.95);
        Matrix S(2, 2);
        S << a, r * std::sqrt(a * b), r * std::sqrt(a * b), b;
        VARModel m;
        m.p = p;
        m.coefficients = phi;
        m.residual_cov = S;
        m.intercept = Vector::Zero(2);
        const std::size_t H = 1 + rng.below(20);
        const auto g = gfevd(m, H);
        const auto o = volnet::testing::scalar_gfevd_2(flat, {S(0, 0), S(0, 1), S(1, 0), S(1, 1)}, H);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) worst = std::max(worst, std::abs(g.theta(i, j) - o[i][j]));
            worst_sum = std::max(worst_sum, std::abs(g.theta.row(i).sum() - 1.0));
        }
        ++cases;
    }
    return {worst <= 1e-10 && worst_sum <= 1e-10,
            "100 cases, max |diff| " + fmt(worst) + ", max |row sum - 1| " + fmt(worst_sum)};
}

// 2. Reverse-mode gradient against central differences.
Outcome gradient_exactness()
{
    DCGRUConfig c;
    c.num_layers = 2;
    c.hidden_dim = 8;
    c.k_max = 2;
    double worst = 0.0;
    std::string where;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto in = volnet::testing::random_instance(seed, 3, 4, 2, c);
        const auto r = volnet::testing::check_gradient(in);
        if (r.checked != in.model.parameter_count()) return {false, "not every parameter was checked"};
        if (r.worst > worst) {
            worst = r.worst;
            where = r.worst_name + " (seed " + std::to_string(seed) + ")";
        }
    }
    return {worst < 1e-4, "20 seeds, worst relative error " + fmt(worst) + " at " + where};
}

// 3. Masks: inactive inputs, inactive targets, cut nodes.
Outcome mask_semantics()
{
    DCGRUConfig c;
    c.num_layers = 2;
    c.hidden_dim = 8;
    c.k_max = 2;
    int a_ok = 0, b_ok = 0, c_ok = 0;
    const int seeds = 20;
    for (std::uint64_t seed = 1; seed <= static_cast<std::uint64_t>(seeds); ++seed) {
        CounterRng rng(seed, 3);
        {
            auto in = volnet::testing::random_instance(seed, 5, 10, 4, c, 0.3);
            const Matrix base = seq2seq_forward(in.model, in.window, in.graphs).y_hat;
            for (Eigen::Index i = 0; i < in.window.x.size(); ++i)
                if (in.window.ex.data()[i] == 0.0) in.window.x.data()[i] = rng.uniform(-1e6, 1e6);
            a_ok += bitwise_equal(base, seq2seq_forward(in.model, in.window, in.graphs).y_hat);
        }
        {
            const auto in = volnet::testing::random_instance(seed, 5, 10, 4, c, 0.3);
            auto tr = seq2seq_trace(in.model, in.window.x, in.window.ex, in.window.ey, in.graphs);
            const double l0 = masked_mae(tr.y_hat, in.window.y, in.window.ey);
            const Vector g0 = flatten(seq2seq_backward(in.model, tr, masked_mae_grad(tr.y_hat, in.window.y, in.window.ey)));
            for (Eigen::Index i = 0; i < tr.y_hat.size(); ++i)
                if (in.window.ey.data()[i] == 0.0) tr.y_hat.data()[i] += rng.uniform(-1e3, 1e3);
            const double l1 = masked_mae(tr.y_hat, in.window.y, in.window.ey);
            const Vector g1 = flatten(seq2seq_backward(in.model, tr, masked_mae_grad(tr.y_hat, in.window.y, in.window.ey)));
            b_ok += l0 == l1 && bitwise_equal(g0, g1);
        }
        {
            auto in = volnet::testing::random_instance(seed, 5, 10, 4, c, 0.0);
            const Eigen::Index cut = static_cast<Eigen::Index>(seed % 5);
            for (auto& g : in.graphs) {
                g.row(cut).setZero();
                g.col(cut).setZero();
            }
            const Matrix base = seq2seq_forward(in.model, in.window, in.graphs).y_hat;
            for (Eigen::Index t = 0; t < in.window.x.rows(); ++t)
                for (Eigen::Index n = 0; n < 5; ++n)
                    if (n != cut) in.window.x(t, n) += rng.normal();
            c_ok += bitwise_equal(base.col(cut), seq2seq_forward(in.model, in.window, in.graphs).y_hat.col(cut));
        }
    }
    return {a_ok == seeds && b_ok == seeds && c_ok == seeds,
            "(a) " + std::to_string(a_ok) + "/20, (b) " + std::to_string(b_ok) + "/20, (c) " + std::to_string(c_ok) + "/20"};
}

// 4. Net spillovers sum to zero.
Outcome net_identity()
{
    CounterRng rng(404);
    double worst = 0.0;
    for (int k = 0; k < 100; ++k) {
        const auto N = static_cast<Eigen::Index>(2 + rng.below(15));
        SpilloverGraph g;
        g.theta.resize(N, N);
        for (Eigen::Index i = 0; i < N; ++i) {
            for (Eigen::Index j = 0; j < N; ++j) g.theta(i, j) = rng.uniform();
            g.theta.row(i) /= g.theta.row(i).sum();
        }
        worst = std::max(worst, std::abs(net_spillover(g).sum()));
    }
    return {worst <= 1e-9, "100 matrices, max |sum| " + fmt(worst)};
}

// 5. Block-diagonal planted spillover recovered from T = 5000.
Outcome planted_recovery()
{
    const std::vector<int> blocks{0, 0, 0, 0, 1, 1, 1, 1};
    SpilloverSettings st;
    int good = 0;
    std::string scores;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SynthSpec s;
        s.n = 8;
        s.t = 5000;
        s.phi = {block_phi(blocks, 0.4, 0.12)};
        s.sigma = Matrix::Identity(8, 8);
        s.mean = 4.0;
        s.seed = seed;
        const double score = planted_graph_recovery(s, blocks, st);
        good += score >= 0.8;
        scores += (scores.empty() ? "" : " ") + fmt(score);
    }
    return {good >= 8, std::to_string(good) + "/10 seeds score >= 0.8 (" + scores + ")"};
}

// 6. HAR-family OLS recovery.
HARCoefficients har_truth(Eigen::Index N, bool cross_weekly)
{
    HARCoefficients c;
    c.alpha = Vector::LinSpaced(N, 0.1, 0.2);
    c.beta_d = Matrix::Zero(N, N);
    c.beta_w = Matrix::Zero(N, N);
    c.beta_m = Matrix::Zero(N, N);
    for (Eigen::Index i = 0; i < N; ++i) {
        c.beta_d(i, i) = 0.35 + 0.02 * static_cast<double>(i);
        c.beta_w(i, i) = 0.3;
        c.beta_m(i, i) = 0.2;
    }
    c.beta_d(0, N - 1) = 0.06;
    c.beta_d(N - 1, 0) = -0.04;
    if (cross_weekly) c.beta_w(0, 1) = 0.05;
    return c;
}

Matrix har_sample(const HARCoefficients& c, std::size_t steps, double sd, std::uint64_t seed)
{
    CounterRng rng(seed);
    Matrix init(kHarLookback, c.alpha.size());
    for (Eigen::Index r = 0; r < init.rows(); ++r)
        for (Eigen::Index n = 0; n < init.cols(); ++n) init(r, n) = rng.uniform(0.5, 1.5);
    return simulate_har(c, init, steps, sd, rng);
}

double coef_error(const HARCoefficients& a, const HARCoefficients& b)
{
    return std::max({(a.alpha - b.alpha).cwiseAbs().maxCoeff(), (a.beta_d - b.beta_d).cwiseAbs().maxCoeff(),
                     (a.beta_w - b.beta_w).cwiseAbs().maxCoeff(), (a.beta_m - b.beta_m).cwiseAbs().maxCoeff()});
}

// Every estimated coefficient (non-zero standard error) within 3 s.e. of the truth.
bool covered(const HARCoefficients& fit, const HARCoefficients& truth)
{
    if (((fit.alpha - truth.alpha).cwiseAbs().array() > 3 * fit.se_alpha.array()).any()) return false;
    const std::array<std::array<const Matrix*, 3>, 3> parts{{{&fit.beta_d, &fit.se_d, &truth.beta_d},
                                                             {&fit.beta_w, &fit.se_w, &truth.beta_w},
                                                             {&fit.beta_m, &fit.se_m, &truth.beta_m}}};
    for (const auto& [b, se, t] : parts)
        for (Eigen::Index i = 0; i < b->size(); ++i)
            if (se->data()[i] > 0.0 && std::abs(b->data()[i] - t->data()[i]) > 3 * se->data()[i]) return false;
    return true;
}

Outcome estimator_recovery()
{
    // zero noise
    const auto single = har_truth(1, false);
    const auto vtruth = har_truth(3, true);
    const auto kstruth = har_truth(3, false);
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Matrix s = har_sample(single, 200, 0.0, seed);
        const auto f = fit_har(std::vector<double>(s.data(), s.data() + s.rows()));
        worst = std::max({worst, std::abs(f.coef(0) - single.alpha(0)), std::abs(f.coef(1) - single.beta_d(0, 0)),
                          std::abs(f.coef(2) - single.beta_w(0, 0)), std::abs(f.coef(3) - single.beta_m(0, 0))});
        worst = std::max(worst, coef_error(fit_vhar(har_sample(vtruth, 300, 0.0, seed)), vtruth));
        worst = std::max(worst, coef_error(fit_har_ks(har_sample(kstruth, 300, 0.0, seed)), kstruth));
    }
    // noise: per estimator, seeds where every coefficient is inside 3 s.e.
    int har_ok = 0, vhar_ok = 0, ks_ok = 0;
    const auto v2 = har_truth(2, true);
    const auto k2 = har_truth(2, false);
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        const Matrix s = har_sample(single, 1500, 0.05, 1000 + seed);
        const auto f = fit_har(std::vector<double>(s.data(), s.data() + s.rows()));
        const std::array<double, 4> t{single.alpha(0), single.beta_d(0, 0), single.beta_w(0, 0), single.beta_m(0, 0)};
        bool ok = true;
        for (int k = 0; k < 4; ++k) ok = ok && std::abs(f.coef(k) - t[static_cast<std::size_t>(k)]) <= 3 * f.se(k);
        har_ok += ok;
        vhar_ok += covered(fit_vhar(har_sample(v2, 1500, 0.05, 2000 + seed)), v2);
        ks_ok += covered(fit_har_ks(har_sample(k2, 1500, 0.05, 3000 + seed)), k2);
    }
    return {worst <= 1e-8 && har_ok >= 95 && vhar_ok >= 95 && ks_ok >= 95,
            "zero-noise max error " + fmt(worst) + "; all coefficients within 3 s.e.: HAR " + std::to_string(har_ok) +
                "/100, VHAR " + std::to_string(vhar_ok) + "/100, HAR-KS " + std::to_string(ks_ok) + "/100"};
}

// 7. DM size, MCS behaviour, ADF.
Outcome test_calibration()
{
    int rejections = 0;
    for (std::uint64_t trial = 0; trial < 1000; ++trial) {
        CounterRng rng(trial, 0xD3);
        std::vector<double> e0(500), e1(500, 5.0);
        for (auto& e : e0) e = 5.0 + rng.normal();
        rejections += dm_test(e0, e1, 1).p_value_two_sided < 0.05;
    }
    const double size = rejections / 1000.0;

    CounterRng rng(77);
    Matrix same(250, 2);
    for (Eigen::Index t = 0; t < same.rows(); ++t) same(t, 0) = same(t, 1) = std::abs(rng.normal());
    const auto m1 = mcs_test(same, {"a", "b"}, {.alpha = 0.1, .replications = 1000, .block_length = 0, .seed = 5});
    const bool identical_ok = m1.p_values[0] == 1.0 && m1.p_values[1] == 1.0 && m1.surviving.size() == 2;
    Matrix shifted(250, 3);
    for (Eigen::Index t = 0; t < shifted.rows(); ++t)
        for (Eigen::Index m = 0; m < 3; ++m) shifted(t, m) = std::abs(rng.normal());
    const Vector c2 = shifted.col(2);
    const double sd = std::sqrt((c2.array() - c2.mean()).square().sum() / static_cast<double>(c2.size() - 1));
    shifted.col(2).array() += 10 * sd;
    const auto m2 = mcs_test(shifted, {"a", "b", "c"}, {.alpha = 0.1, .replications = 1000, .block_length = 0, .seed = 6});
    const bool shift_ok = !m2.survives(2) && m2.p_values[2] < 0.1;

    int ar_reject = 0, rw_keep = 0;
    for (std::uint64_t seed = 1; seed <= 100; ++seed) {
        CounterRng r(seed, 0xADF);
        std::vector<double> ar(2000), rw(2000);
        for (std::size_t t = 1; t < 2000; ++t) {
            ar[t] = 0.5 * ar[t - 1] + r.normal();
            rw[t] = rw[t - 1] + r.normal();
        }
        ar_reject += adf_test(ar).p_value < 0.05;
        rw_keep += adf_test(rw).p_value >= 0.05;
    }
    const bool pass = size >= 0.035 && size <= 0.065 && identical_ok && shift_ok && ar_reject >= 95 && rw_keep >= 90;
    return {pass, "DM size " + fmt(size) + "; MCS identical " + (identical_ok ? "kept" : "NOT kept") + ", shifted p " +
                      fmt(m2.p_values[2]) + (shift_ok ? " ejected" : " NOT ejected") + "; ADF AR(0.5) rejected " +
                      std::to_string(ar_reject) + "/100, random walk retained " + std::to_string(rw_keep) + "/100"};
}

// 8. Dynamic union-calendar model against the static intersection baseline.
Outcome directional_claim()
{
    const std::size_t seeds = 5;
    std::vector<Vector> dyn, stat;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
        const RVPanel p = generate_panel(regime_switching_spec(3000, seed));
        TrainConfig c;
        c.look_back = 100;
        c.horizon = 1;
        c.max_epochs = 20;
        c.patience = 5;
        c.step_size = 1e-2;
        c.model = {1, 8, 2};
        c.seed = seed;
        std::vector<IteratedSeries> series;
        for (bool baseline : {false, true}) {
            TrainConfig cc = c;
            if (baseline) {
                cc.graph_mode = GraphMode::Static;
                cc.calendar_mode = CalendarMode::Intersection;
            }
            const TrainResult r = train(cc, p);
            series.push_back(test_forecast(make_forecaster(r), r.setup));
        }
        const auto common = align_common_dates(series);
        dyn.push_back(mafe(common[0]));
        stat.push_back(mafe(common[1]));
    }
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v[v.size() / 2];
    };
    int wins = 0;
    std::string per;
    for (Eigen::Index n = 0; n < 8; ++n) {
        std::vector<double> a, b;
        for (std::size_t s = 0; s < seeds; ++s) {
            a.push_back(dyn[s](n));
            b.push_back(stat[s](n));
        }
        const double ma = median(a), mb = median(b);
        wins += ma < mb;
        per += (per.empty() ? "" : " ") + fmt(ma / mb);
    }
    return {wins >= 5, std::to_string(wins) + "/8 indices won on median MAFE (ratios " + per + ")"};
}

// 9. Every CLI command replays to identical files.
Outcome cli_reproducibility()
{
    const fs::path dir = fs::temp_directory_path() / "volnet_acceptance_cli";
    fs::remove_all(dir);
    fs::create_directories(dir);
    auto run = [](std::vector<std::string> args) {
        std::ostringstream o, e;
        const int code = cli::run(std::move(args), {o, e});
        if (code != 0) throw std::runtime_error("command failed: " + e.str());
        return o.str();
    };
    auto p = [&](const std::string& s) { return (dir / s).string(); };
    {
        std::ofstream(dir / "train.toml") << "look_back = 40\nmax_epochs = 3\n[model]\nnum_layers = 1\nhidden_dim = 4\n"
                                             "[spillover]\np = 1\n";
        std::ofstream(dir / "compare.json") << R"({"models": ["har", "vhar", "stg-spillover"], "grid": [[40, 1], [40, 5]],)"
                                               R"( "train": {"max_epochs": 1, "model": {"num_layers": 1, "hidden_dim": 4}, "spillover": {"p": 1}}})";
        std::string a = "loss\n", b = "loss\n";
        CounterRng rng(9);
        for (int t = 0; t < 120; ++t) {
            a += format_double(std::abs(rng.normal())) + "\n";
            b += format_double(std::abs(rng.normal()) + 0.1) + "\n";
        }
        std::ofstream(dir / "a.csv") << a;
        std::ofstream(dir / "b.csv") << b;
    }
    run({"synth", "--preset", "regime-switching", "--t", "800", "--seed", "4", "--out", p("synth/panel.csv")});
    const std::string panel = p("synth/panel.csv");
    run({"stats", "--input", panel, "--out", p("stats")});
    run({"spillover", "--input", panel, "--p", "2", "--out", p("graph/graph.json")});
    run({"train", "--config", p("train.toml"), "--input", panel, "--out", p("train")});
    run({"forecast", "--model", p("train/model.json"), "--input", panel, "--out", p("fc/forecast.csv")});
    run({"evaluate", "--input", panel, "--forecast", p("fc/forecast.csv"), "--out", p("eval")});
    run({"compare", "--losses", p("a.csv"), p("b.csv"), "--test", "dm", "--h", "2", "--out", p("dm/dm.json")});
    run({"compare", "--losses", p("a.csv"), p("b.csv"), "--test", "mcs", "--out", p("mcs/mcs.json")});
    run({"compare", "--config", p("compare.json"), "--input", panel, "--out", p("cmp")});

    int ok = 0, total = 0;
    std::size_t files = 0;
    std::string failed;
    for (const char* d : {"synth", "stats", "graph", "train", "fc", "eval", "dm", "mcs", "cmp"}) {
        ++total;
        const fs::path manifest = dir / d / "manifest.json";
        const fs::path target = dir / (std::string(d) + "_replay");
        std::ostringstream o, e;
        bool same = cli::run({"replay", "--manifest", manifest.string(), "--out", target.string()}, {o, e}) == 0;
        std::ifstream in(manifest);
        const auto m = nlohmann::json::parse(in);
        for (const auto& out : m.at("outputs")) {
            const auto rel = out.at("path").get<std::string>();
            same = same && fs::exists(target / rel) && cli::read_file(dir / d / rel) == cli::read_file(target / rel);
            ++files;
        }
        if (same)
            ++ok;
        else
            failed += std::string(" ") + d + ": " + e.str();
    }
    fs::remove_all(dir);
    return {ok == total, std::to_string(ok) + "/" + std::to_string(total) + " commands replayed, " + std::to_string(files) +
                             " files byte-identical" + failed};
}

struct Criterion {
    int id;
    const char* name;
    double budget_seconds;
    Outcome (*run)();
};

} // namespace

int main(int argc, char** argv)
{
    const std::vector<Criterion> all{
        {1, "GFEVD correctness", 10, gfevd_correctness},
        {2, "gradient exactness", 60, gradient_exactness},
        {3, "mask semantics", 30, mask_semantics},
        {4, "net spillover identity", 5, net_identity},
        {5, "planted-graph recovery", 120, planted_recovery},
        {6, "estimator recovery", 120, estimator_recovery},
        {7, "statistical-test calibration", 300, test_calibration},
        {8, "dynamic union model beats static intersection baseline", 1800, directional_claim},
        {9, "CLI reproducibility", 60, cli_reproducibility},
    };
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::stoi(argv[i]));
    int failures = 0;
    for (const auto& c : all) {
        if (!wanted.empty() && !wanted.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool in_time = secs <= c.budget_seconds;
        const bool pass = o.pass && in_time;
        failures += !pass;
        std::cout << (pass ? "PASS" : "FAIL") << " [" << c.id << "] " << c.name << ": " << o.detail << " (" << fmt(secs)
                  << " s of " << c.budget_seconds << " s" << (in_time ? "" : ", over budget") << ")" << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
