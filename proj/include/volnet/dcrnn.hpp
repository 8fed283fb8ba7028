#pragma once

/// @file
/// Diffusion-convolutional GRU encoder-decoder with exact gradients.
///
/// Shapes: N nodes, C input channels, H hidden units per node, K diffusion
/// terms. A filter over C channels producing C' channels stores its K
/// coefficient blocks stacked, (K*C) x C', block k acting on P^k x.

#include "volnet/core.hpp"
#include "volnet/panel.hpp"
#include "volnet/rng.hpp"

#include <nlohmann/json.hpp>

#include <concepts>
#include <type_traits>
#include <string>
#include <vector>

namespace volnet {

/// D^{-1} A; rows without outgoing weight stay zero.
inline Matrix transition_matrix(const Matrix& adjacency)
{
    if (adjacency.rows() != adjacency.cols()) throw DataError("adjacency must be square");
    if ((adjacency.array() < 0.0).any()) throw DataError("adjacency has a negative entry");
    Matrix p = adjacency;
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double deg = p.row(i).sum();
        if (deg > 0.0) p.row(i) /= deg;
    }
    return p;
}

/// [z, Pz, ..., P^{K-1} z], N x (K*C).
inline Matrix diffusion_features(const Matrix& transition, const Matrix& z, std::size_t k_max)
{
    const auto C = z.cols();
    Matrix f(z.rows(), C * static_cast<Eigen::Index>(k_max));
    f.leftCols(C) = z;
    for (Eigen::Index k = 1; k < static_cast<Eigen::Index>(k_max); ++k)
        f.middleCols(k * C, C).noalias() = transition * f.middleCols((k - 1) * C, C);
    return f;
}

/// Adjoint of diffusion_features: sum_k (P^k)' dF_k.
inline Matrix diffusion_features_adjoint(const Matrix& transition, const Matrix& df, std::size_t k_max)
{
    const auto C = df.cols() / static_cast<Eigen::Index>(k_max);
    Matrix acc = df.rightCols(C);
    for (Eigen::Index k = static_cast<Eigen::Index>(k_max) - 2; k >= 0; --k) {
        Matrix next = df.middleCols(k * C, C);
        next.noalias() += transition.transpose() * acc;
        acc = std::move(next);
    }
    return acc;
}

struct DiffusionFilter {
    std::size_t k_max = 1;
    Matrix weights; ///< (K*C_in) x C_out

    Eigen::Index in_channels() const { return weights.rows() / static_cast<Eigen::Index>(k_max); }
    Eigen::Index out_channels() const { return weights.cols(); }
};

/// sum_k P^k x theta_k with P = D^{-1} A.
inline Matrix diffusion_conv(const Matrix& x, const Matrix& adjacency, const DiffusionFilter& filter)
{
    if (filter.k_max < 1) throw ConfigError("diffusion filter needs K >= 1");
    if (adjacency.rows() != x.rows() || adjacency.cols() != x.rows()) throw DataError("adjacency shape mismatch");
    if (x.cols() != filter.in_channels() ||
        filter.weights.rows() != filter.in_channels() * static_cast<Eigen::Index>(filter.k_max))
        throw DataError("channel count mismatch");
    return diffusion_features(transition_matrix(adjacency), x, filter.k_max) * filter.weights;
}

struct DCGRUConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_dim = 32;
    std::size_t k_max = 2;
};

struct DCGRULayer {
    DiffusionFilter gate;      ///< -> 2H channels: reset then update
    RowVector gate_bias;
    DiffusionFilter candidate; ///< -> H channels
    RowVector candidate_bias;
};

struct DCGRUModel {
    DCGRUConfig config;
    std::vector<DCGRULayer> encoder;
    std::vector<DCGRULayer> decoder;
    Matrix projection;      ///< H x 1
    Vector projection_bias; ///< size 1

    std::size_t parameter_count() const;
};

namespace detail {

inline DCGRULayer zero_layer(Eigen::Index in, Eigen::Index H, std::size_t K)
{
    const auto rows = (in + H) * static_cast<Eigen::Index>(K);
    DCGRULayer l;
    l.gate = {K, Matrix::Zero(rows, 2 * H)};
    l.gate_bias = RowVector::Zero(2 * H);
    l.candidate = {K, Matrix::Zero(rows, H)};
    l.candidate_bias = RowVector::Zero(H);
    return l;
}

template <class Layer, class F>
void visit_layer(Layer& l, const std::string& prefix, F& f)
{
    f(prefix + ".gate.weights", l.gate.weights, l.gate.weights.rows());
    f(prefix + ".gate.bias", l.gate_bias, Eigen::Index{0});
    f(prefix + ".candidate.weights", l.candidate.weights, l.candidate.weights.rows());
    f(prefix + ".candidate.bias", l.candidate_bias, Eigen::Index{0});
}

} // namespace detail

/// Calls f(name, matrix, fan_in) for every parameter block in a fixed order;
/// fan_in is 0 for biases.
template <class Model, class F>
    requires std::same_as<std::remove_const_t<Model>, DCGRUModel>
void for_each_parameter(Model& m, F&& f)
{
    for (std::size_t i = 0; i < m.encoder.size(); ++i) detail::visit_layer(m.encoder[i], "encoder." + std::to_string(i), f);
    for (std::size_t i = 0; i < m.decoder.size(); ++i) detail::visit_layer(m.decoder[i], "decoder." + std::to_string(i), f);
    f(std::string("projection.weights"), m.projection, m.projection.rows());
    f(std::string("projection.bias"), m.projection_bias, Eigen::Index{0});
}

inline std::size_t DCGRUModel::parameter_count() const
{
    std::size_t n = 0;
    for_each_parameter(*this, [&](const std::string&, const auto& p, Eigen::Index) { n += static_cast<std::size_t>(p.size()); });
    return n;
}

/// All-zero model with the shapes implied by `config`.
inline DCGRUModel zero_model(const DCGRUConfig& config)
{
    if (config.num_layers < 1 || config.hidden_dim < 1 || config.k_max < 1)
        throw ConfigError("layers, hidden_dim and K must be positive");
    DCGRUModel m;
    m.config = config;
    const auto H = static_cast<Eigen::Index>(config.hidden_dim);
    for (std::size_t l = 0; l < config.num_layers; ++l) {
        const Eigen::Index in = l == 0 ? 1 : H;
        m.encoder.push_back(detail::zero_layer(in, H, config.k_max));
        m.decoder.push_back(detail::zero_layer(in, H, config.k_max));
    }
    m.projection = Matrix::Zero(H, 1);
    m.projection_bias = Vector::Zero(1);
    return m;
}

/// Weights uniform in [-s, s], s = fan_in^{-1/2}; biases zero.
inline DCGRUModel init_model(const DCGRUConfig& config, std::uint64_t seed)
{
    DCGRUModel m = zero_model(config);
    CounterRng rng(seed, 0x64637275ULL);
    for_each_parameter(m, [&](const std::string&, auto& p, Eigen::Index fan_in) {
        if (fan_in == 0) return;
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (Eigen::Index c = 0; c < p.cols(); ++c)
            for (Eigen::Index r = 0; r < p.rows(); ++r) p(r, c) = rng.uniform(-s, s);
    });
    return m;
}

struct CellCache {
    Matrix h_prev;
    Matrix feat;      ///< diffusion features of [x, h_prev]
    Matrix gates;     ///< sigmoid outputs, N x 2H
    Matrix feat_cand; ///< diffusion features of [x, r*h_prev]
    Matrix cand;      ///< tanh outputs, N x H
    std::size_t transition = 0;
};

inline Matrix sigmoid(const Matrix& z) { return (1.0 + (-z.array()).exp()).inverse().matrix(); }

/// One DCGRU update. `cache` may be null when no backward pass follows.
inline Matrix dcgru_step(const Matrix& x, const Matrix& h_prev, const DCGRULayer& layer, const Matrix& transition,
                         CellCache* cache = nullptr)
{
    const auto H = h_prev.cols();
    const auto C = x.cols();
    const std::size_t K = layer.gate.k_max;
    if (x.rows() != h_prev.rows() || transition.rows() != x.rows() || layer.gate.in_channels() != C + H)
        throw DataError("DCGRU shape mismatch");
    Matrix z(x.rows(), C + H);
    z << x, h_prev;
    Matrix feat = diffusion_features(transition, z, K);
    Matrix pre = feat * layer.gate.weights;
    pre.rowwise() += layer.gate_bias;
    Matrix gates = sigmoid(pre);
    z.rightCols(H) = gates.leftCols(H).cwiseProduct(h_prev);
    Matrix feat_cand = diffusion_features(transition, z, K);
    Matrix pc = feat_cand * layer.candidate.weights;
    pc.rowwise() += layer.candidate_bias;
    Matrix cand = pc.array().tanh().matrix();
    const auto u = gates.rightCols(H);
    Matrix h = u.cwiseProduct(h_prev) + (1.0 - u.array()).matrix().cwiseProduct(cand);
    if (!h.allFinite()) throw NumericError("non-finite DCGRU state");
    if (cache) {
        cache->h_prev = h_prev;
        cache->feat = std::move(feat);
        cache->gates = std::move(gates);
        cache->feat_cand = std::move(feat_cand);
        cache->cand = std::move(cand);
    }
    return h;
}

/// Reverse of dcgru_step. Accumulates parameter gradients into `grad`,
/// returns (d input, d h_prev).
inline std::pair<Matrix, Matrix> dcgru_step_backward(const CellCache& cache, const Matrix& dh, const DCGRULayer& layer,
                                                     const Matrix& transition, DCGRULayer& grad)
{
    const auto H = dh.cols();
    const auto C = layer.gate.in_channels() - H;
    const std::size_t K = layer.gate.k_max;
    const auto r = cache.gates.leftCols(H);
    const auto u = cache.gates.rightCols(H);

    Matrix dh_prev = dh.cwiseProduct(u);
    const Matrix du = dh.cwiseProduct(cache.h_prev - cache.cand);
    const Matrix dpc = dh.cwiseProduct((1.0 - u.array()).matrix())
                           .cwiseProduct((1.0 - cache.cand.array().square()).matrix());
    grad.candidate.weights.noalias() += cache.feat_cand.transpose() * dpc;
    grad.candidate_bias += dpc.colwise().sum();
    const Matrix dz2 = diffusion_features_adjoint(transition, dpc * layer.candidate.weights.transpose(), K);
    Matrix dx = dz2.leftCols(C);
    const auto drh = dz2.rightCols(H);
    dh_prev += drh.cwiseProduct(r);

    Matrix dgates(dh.rows(), 2 * H);
    dgates.leftCols(H) = drh.cwiseProduct(cache.h_prev);
    dgates.rightCols(H) = du;
    dgates = dgates.cwiseProduct(cache.gates.cwiseProduct((1.0 - cache.gates.array()).matrix()));
    grad.gate.weights.noalias() += cache.feat.transpose() * dgates;
    grad.gate_bias += dgates.colwise().sum();
    const Matrix dz = diffusion_features_adjoint(transition, dgates * layer.gate.weights.transpose(), K);
    dx += dz.leftCols(C);
    dh_prev += dz.rightCols(H);
    return {std::move(dx), std::move(dh_prev)};
}

/// Forward-pass record needed for the backward pass.
struct Seq2SeqTrace {
    Matrix y_hat; ///< T_Y x N
    std::vector<Matrix> transitions;
    std::vector<std::vector<CellCache>> encoder; ///< [t][layer]
    std::vector<std::vector<CellCache>> decoder;
    std::vector<Matrix> decoder_top; ///< top hidden state per decoder step
    Matrix ey;
};

struct ForecastOutput {
    Matrix y_hat;                     ///< T_Y x N, standardized scale
    std::vector<Matrix> hidden_trace; ///< top-layer hidden per step, when requested
};

/// Encoder over x~ = ex * x with graphs[0..T_X), decoder from a zero go row
/// feeding back ey * y_hat, with graphs[T_X..T_X+T_Y).
inline Seq2SeqTrace seq2seq_trace(const DCGRUModel& m, const Matrix& x, const Matrix& ex, const Matrix& ey,
                                  const std::vector<Matrix>& graphs, bool keep_cache = true)
{
    const auto N = x.cols();
    const auto TX = x.rows();
    const auto TY = ey.rows();
    if (ex.rows() != TX || ex.cols() != N || ey.cols() != N) throw DataError("window mask shape mismatch");
    if (static_cast<Eigen::Index>(graphs.size()) != TX + TY)
        throw DataError("expected " + std::to_string(TX + TY) + " graphs, got " + std::to_string(graphs.size()));
    if (TX < 1 || TY < 1) throw DataError("empty window");
    const auto L = m.config.num_layers;
    const auto H = static_cast<Eigen::Index>(m.config.hidden_dim);

    Seq2SeqTrace tr;
    tr.ey = ey;
    tr.transitions.reserve(graphs.size());
    for (const auto& g : graphs) {
        if (g.rows() != N || g.cols() != N) throw DataError("graph shape mismatch");
        tr.transitions.push_back(transition_matrix(g));
    }

    std::vector<Matrix> h(L, Matrix::Zero(N, H));
    const Matrix xt = (ex.array() != 0.0).select(x, 0.0);
    for (Eigen::Index t = 0; t < TX; ++t) {
        std::vector<CellCache> caches(keep_cache ? L : 0);
        Matrix input = xt.row(t).transpose();
        for (std::size_t l = 0; l < L; ++l) {
            h[l] = dcgru_step(input, h[l], m.encoder[l], tr.transitions[static_cast<std::size_t>(t)],
                              keep_cache ? &caches[l] : nullptr);
            if (keep_cache) caches[l].transition = static_cast<std::size_t>(t);
            input = h[l];
        }
        if (keep_cache) tr.encoder.push_back(std::move(caches));
    }

    tr.y_hat.resize(TY, N);
    Matrix input = Matrix::Zero(N, 1);
    for (Eigen::Index j = 0; j < TY; ++j) {
        const auto gi = static_cast<std::size_t>(TX + j);
        std::vector<CellCache> caches(keep_cache ? L : 0);
        Matrix layer_in = input;
        for (std::size_t l = 0; l < L; ++l) {
            h[l] = dcgru_step(layer_in, h[l], m.decoder[l], tr.transitions[gi], keep_cache ? &caches[l] : nullptr);
            if (keep_cache) caches[l].transition = gi;
            layer_in = h[l];
        }
        Vector out = h[L - 1] * m.projection.col(0);
        out.array() += m.projection_bias(0);
        tr.y_hat.row(j) = out.transpose();
        tr.decoder_top.push_back(h[L - 1]);
        input = out.cwiseProduct(ey.row(j).transpose());
        if (keep_cache) tr.decoder.push_back(std::move(caches));
    }
    return tr;
}

/// Per-day masked adjacencies A * E^{A_t}.
inline std::vector<Matrix> masked_graphs(const Matrix& adjacency, const std::vector<Matrix>& masks)
{
    std::vector<Matrix> out;
    out.reserve(masks.size());
    for (const auto& mk : masks) out.push_back(adjacency.cwiseProduct(mk));
    return out;
}

inline ForecastOutput seq2seq_forward(const DCGRUModel& m, const MaskedWindowPair& w, const std::vector<Matrix>& graphs,
                                      bool with_hidden = false)
{
    auto tr = seq2seq_trace(m, w.x, w.ex, w.ey, graphs, false);
    ForecastOutput out{std::move(tr.y_hat), {}};
    if (with_hidden) out.hidden_trace = std::move(tr.decoder_top);
    return out;
}

/// sum |y~ - ey*y_hat| / sum ey, where y~ is already zero at inactive cells.
inline double masked_mae(const Matrix& y_hat, const Matrix& y_tilde, const Matrix& ey)
{
    if (y_hat.rows() != y_tilde.rows() || y_hat.cols() != y_tilde.cols() || ey.rows() != y_hat.rows() ||
        ey.cols() != y_hat.cols())
        throw DataError("loss shape mismatch");
    const double active = ey.sum();
    if (!(active > 0.0)) throw DataError("no active targets");
    return (y_tilde.cwiseProduct(ey) - ey.cwiseProduct(y_hat)).cwiseAbs().sum() / active;
}

/// d masked_mae / d y_hat; the subgradient at a zero residual is 0.
inline Matrix masked_mae_grad(const Matrix& y_hat, const Matrix& y_tilde, const Matrix& ey)
{
    const double active = ey.sum();
    if (!(active > 0.0)) throw DataError("no active targets");
    Matrix g(y_hat.rows(), y_hat.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) {
            const double r = ey(i, j) * y_hat(i, j) - ey(i, j) * y_tilde(i, j);
            g(i, j) = r > 0.0 ? ey(i, j) / active : r < 0.0 ? -ey(i, j) / active : 0.0;
        }
    return g;
}

/// Gradient of any scalar loss L(y_hat) given dL/dy_hat.
inline DCGRUModel seq2seq_backward(const DCGRUModel& m, const Seq2SeqTrace& tr, const Matrix& dy_hat)
{
    if (tr.decoder.empty()) throw DataError("backward needs a forward trace with caches");
    const auto L = m.config.num_layers;
    const auto TY = static_cast<Eigen::Index>(tr.decoder.size());
    const auto N = dy_hat.cols();
    const auto H = static_cast<Eigen::Index>(m.config.hidden_dim);
    DCGRUModel g = zero_model(m.config);

    std::vector<Matrix> dh(L, Matrix::Zero(N, H));
    Vector d_feedback = Vector::Zero(N); // gradient w.r.t. ey * y_hat fed into the next step
    for (Eigen::Index j = TY - 1; j >= 0; --j) {
        const Vector dy = dy_hat.row(j).transpose() + d_feedback.cwiseProduct(tr.ey.row(j).transpose());
        const Matrix& top = tr.decoder_top[static_cast<std::size_t>(j)];
        g.projection.col(0).noalias() += top.transpose() * dy;
        g.projection_bias(0) += dy.sum();
        dh[L - 1].noalias() += dy * m.projection.col(0).transpose();
        Matrix dx;
        for (std::size_t l = L; l-- > 0;) {
            const auto& cache = tr.decoder[static_cast<std::size_t>(j)][l];
            auto [dxl, dhp] = dcgru_step_backward(cache, dh[l], m.decoder[l], tr.transitions[cache.transition], g.decoder[l]);
            dh[l] = std::move(dhp);
            if (l > 0) dh[l - 1] += dxl;
            else dx = std::move(dxl);
        }
        d_feedback = j > 0 ? Vector(dx.col(0)) : Vector::Zero(N);
    }
    for (auto t = static_cast<Eigen::Index>(tr.encoder.size()) - 1; t >= 0; --t) {
        for (std::size_t l = L; l-- > 0;) {
            const auto& cache = tr.encoder[static_cast<std::size_t>(t)][l];
            auto [dxl, dhp] = dcgru_step_backward(cache, dh[l], m.encoder[l], tr.transitions[cache.transition], g.encoder[l]);
            dh[l] = std::move(dhp);
            if (l > 0) dh[l - 1] += dxl;
        }
    }
    for_each_parameter(g, [](const std::string& name, const auto& p, Eigen::Index) {
        if (!p.allFinite()) throw NumericError("non-finite gradient in " + name);
    });
    return g;
}

/// Masked MAE of one window and its gradient.
inline double loss_and_gradient(const DCGRUModel& m, const MaskedWindowPair& w, const std::vector<Matrix>& graphs,
                                DCGRUModel& grad)
{
    const auto tr = seq2seq_trace(m, w.x, w.ex, w.ey, graphs, true);
    const double loss = masked_mae(tr.y_hat, w.y, w.ey);
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    grad = seq2seq_backward(m, tr, masked_mae_grad(tr.y_hat, w.y, w.ey));
    return loss;
}

/// Parameters concatenated in for_each_parameter order, each block row-major.
inline Vector flatten(const DCGRUModel& m)
{
    Vector out(static_cast<Eigen::Index>(m.parameter_count()));
    Eigen::Index i = 0;
    for_each_parameter(m, [&](const std::string&, const auto& p, Eigen::Index) {
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) out(i++) = p(r, c);
    });
    return out;
}

inline void assign_flat(DCGRUModel& m, const Vector& flat)
{
    if (flat.size() != static_cast<Eigen::Index>(m.parameter_count())) throw DataError("parameter vector size mismatch");
    Eigen::Index i = 0;
    for_each_parameter(m, [&](const std::string&, auto& p, Eigen::Index) {
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = flat(i++);
    });
}

/// Name of the parameter block holding flat index `i`.
inline std::string parameter_name(const DCGRUModel& m, Eigen::Index i)
{
    std::string found;
    Eigen::Index offset = 0;
    for_each_parameter(m, [&](const std::string& name, const auto& p, Eigen::Index) {
        if (found.empty() && i < offset + p.size()) found = name + "[" + std::to_string(i - offset) + "]";
        offset += p.size();
    });
    return found;
}

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json to_json(const DCGRUModel& m)
{
    nlohmann::json params = nlohmann::json::object();
    for_each_parameter(m, [&](const std::string& name, const auto& p, Eigen::Index) {
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(p.size()));
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) data.push_back(p(r, c));
        params[name] = {{"shape", {p.rows(), p.cols()}}, {"data", std::move(data)}};
    });
    return {{"format", "volnet-dcgru"},
            {"version", kModelFormatVersion},
            {"config",
             {{"num_layers", m.config.num_layers}, {"hidden_dim", m.config.hidden_dim}, {"k_max", m.config.k_max}}},
            {"parameters", std::move(params)}};
}

inline DCGRUModel model_from_json(const nlohmann::json& j)
{
    if (j.value("format", "") != "volnet-dcgru") throw DataError("not a model document");
    if (j.value("version", 0) != kModelFormatVersion) throw DataError("unsupported model version");
    DCGRUConfig cfg;
    cfg.num_layers = j.at("config").at("num_layers").get<std::size_t>();
    cfg.hidden_dim = j.at("config").at("hidden_dim").get<std::size_t>();
    cfg.k_max = j.at("config").at("k_max").get<std::size_t>();
    DCGRUModel m = zero_model(cfg);
    const auto& params = j.at("parameters");
    for_each_parameter(m, [&](const std::string& name, auto& p, Eigen::Index) {
        if (!params.contains(name)) throw DataError("model document lacks " + name);
        const auto& e = params.at(name);
        const auto shape = e.at("shape").get<std::vector<Eigen::Index>>();
        if (shape.size() != 2 || shape[0] != p.rows() || shape[1] != p.cols()) throw DataError("shape mismatch for " + name);
        const auto data = e.at("data").get<std::vector<double>>();
        if (static_cast<Eigen::Index>(data.size()) != p.size()) throw DataError("size mismatch for " + name);
        std::size_t i = 0;
        for (Eigen::Index r = 0; r < p.rows(); ++r)
            for (Eigen::Index c = 0; c < p.cols(); ++c) p(r, c) = data[i++];
    });
    return m;
}

} // namespace volnet
