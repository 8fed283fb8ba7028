#pragma once

// Shared builders for the DCRNN tests and the acceptance runner.

#include "volnet/dcrnn.hpp"

#include <array>

namespace volnet::testing {

struct Instance {
    DCGRUModel model;
    MaskedWindowPair window;
    Matrix adjacency;
    std::vector<Matrix> graphs;
};

inline Matrix day_mask(const Eigen::RowVectorXd& active)
{
    const auto N = active.size();
    Matrix m(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) m(i, j) = active(i) * active(j);
    return m;
}

/// Random window with roughly `inactive` of the cells masked out, a random
/// non-negative adjacency and per-day masked graphs.
inline Instance random_instance(std::uint64_t seed, Eigen::Index N, Eigen::Index tx, Eigen::Index ty,
                                const DCGRUConfig& cfg, double inactive = 0.2)
{
    CounterRng rng(seed, 99);
    Instance in;
    in.model = init_model(cfg, seed);
    // exercise the biases too
    for_each_parameter(in.model, [&](const std::string&, auto& p, Eigen::Index fan_in) {
        if (fan_in == 0)
            for (Eigen::Index c = 0; c < p.cols(); ++c)
                for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, c) = rng.uniform(-0.3, 0.3);
    });
    auto& w = in.window;
    w.x.resize(tx, N);
    w.ex.resize(tx, N);
    w.y.resize(ty, N);
    w.ey.resize(ty, N);
    for (Eigen::Index t = 0; t < tx; ++t)
        for (Eigen::Index n = 0; n < N; ++n) {
            w.ex(t, n) = rng.bernoulli(inactive) ? 0.0 : 1.0;
            w.x(t, n) = w.ex(t, n) * rng.uniform(-2.0, 2.0);
        }
    for (Eigen::Index t = 0; t < ty; ++t)
        for (Eigen::Index n = 0; n < N; ++n) {
            w.ey(t, n) = rng.bernoulli(inactive) ? 0.0 : 1.0;
            w.y(t, n) = w.ey(t, n) * rng.uniform(-2.0, 2.0);
        }
    if (w.ey.sum() == 0.0) {
        w.ey(0, 0) = 1.0;
        w.y(0, 0) = 0.5;
    }
    in.adjacency.resize(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
        for (Eigen::Index j = 0; j < N; ++j) in.adjacency(i, j) = rng.uniform();
    for (Eigen::Index t = 0; t < tx; ++t) w.adjacency_masks.push_back(day_mask(w.ex.row(t)));
    for (Eigen::Index t = 0; t < ty; ++t) w.adjacency_masks.push_back(day_mask(w.ey.row(t)));
    in.graphs = masked_graphs(in.adjacency, w.adjacency_masks);
    return in;
}

struct GradientCheck {
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
};

/// Compares every analytic gradient entry with a central difference of the
/// masked loss; error measure |a - fd| / max(1, |a|).
inline GradientCheck check_gradient(const Instance& in, double step = 1e-5)
{
    DCGRUModel grad;
    loss_and_gradient(in.model, in.window, in.graphs, grad);
    const Vector analytic = flatten(grad);
    const Vector base = flatten(in.model);
    DCGRUModel probe = in.model;
    auto loss_at = [&](const Vector& p) {
        assign_flat(probe, p);
        const auto out = seq2seq_forward(probe, in.window, in.graphs);
        return masked_mae(out.y_hat, in.window.y, in.window.ey);
    };
    GradientCheck r;
    for (Eigen::Index i = 0; i < base.size(); ++i) {
        Vector p = base;
        p(i) = base(i) + step;
        const double up = loss_at(p);
        p(i) = base(i) - step;
        const double down = loss_at(p);
        const double fd = (up - down) / (2 * step);
        const double err = std::abs(analytic(i) - fd) / std::max(1.0, std::abs(analytic(i)));
        if (err > r.worst) {
            r.worst = err;
            r.worst_name = parameter_name(in.model, i);
        }
        ++r.checked;
    }
    return r;
}

// Direct scalar evaluation of the decomposition for N = 2, no matrix helpers.
inline std::array<std::array<double, 2>, 2> scalar_gfevd_2(const std::vector<std::array<double, 4>>& phi,
                                                     const std::array<double, 4>& s, std::size_t H)
{
    // B_h as flat row-major 2x2 arrays.
    std::vector<std::array<double, 4>> B(H);
    B[0] = {1, 0, 0, 1};
    for (std::size_t h = 1; h < H; ++h) {
        std::array<double, 4> acc{0, 0, 0, 0};
        for (std::size_t j = 1; j <= phi.size() && j <= h; ++j) {
            const auto& P = phi[j - 1];
            const auto& Q = B[h - j];
            acc[0] += P[0] * Q[0] + P[1] * Q[2];
            acc[1] += P[0] * Q[1] + P[1] * Q[3];
            acc[2] += P[2] * Q[0] + P[3] * Q[2];
            acc[3] += P[2] * Q[1] + P[3] * Q[3];
        }
        B[h] = acc;
    }
    std::array<std::array<double, 2>, 2> th{};
    for (int i = 0; i < 2; ++i) {
        double den = 0.0;
        double num[2] = {0, 0};
        for (std::size_t h = 0; h < H; ++h) {
            const double bi0 = B[h][i * 2 + 0], bi1 = B[h][i * 2 + 1];
            // e_i' B_h S e_j
            const double bs0 = bi0 * s[0] + bi1 * s[2];
            const double bs1 = bi0 * s[1] + bi1 * s[3];
            num[0] += bs0 * bs0;
            num[1] += bs1 * bs1;
            // e_i' B_h S B_h' e_i
            den += bs0 * bi0 + bs1 * bi1;
        }
        const double t0 = num[0] / s[0] / den;
        const double t1 = num[1] / s[3] / den;
        th[i][0] = t0 / (t0 + t1);
        th[i][1] = t1 / (t0 + t1);
    }
    return th;
}

} // namespace volnet::testing
