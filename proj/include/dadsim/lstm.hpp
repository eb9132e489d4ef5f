#pragma once

#include "dadsim/common.hpp"
#include "dadsim/dataset.hpp"
#include "dadsim/rng.hpp"

#include <span>
#include <utility>
#include <vector>

namespace dadsim {

/// Stacked LSTM with a linear head that predicts the next state from an l-row window.
struct ModelConfig {
  Index input_dim = 4;
  Index state_dim = 3;
  Index hidden_size = 64;
  Index num_layers = 2;
  double dropout_rate = 0.15;
  Index history_length = 30;
  Index output_length = 1;

  void validate() const {
    if (input_dim < 1 || state_dim < 1 || state_dim >= input_dim + 1)
      throw ConfigError("model needs 1 <= state_dim <= input_dim");
    if (hidden_size < 1) throw ConfigError("hidden_size must be >= 1");
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
    if (history_length < 1) throw ConfigError("history_length must be >= 1");
    if (output_length != 1) throw ConfigError("output_length is fixed to 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Gate rows are stacked as [input; forget; candidate; output], each hidden_size tall.
struct LayerParams {
  Matrix w_input;      // 4H x in
  Matrix w_recurrent;  // 4H x H
  Vector bias;         // 4H
};

struct ModelParams {
  std::vector<LayerParams> layers;
  Matrix head_w;  // d_s x H
  Vector head_b;  // d_s
};

using ParamGrads = ModelParams;

namespace detail {
inline Eigen::Map<Vector> flat(Matrix& m) { return {m.data(), m.size()}; }
inline Eigen::Map<Vector> flat(Vector& v) { return {v.data(), v.size()}; }
inline Eigen::Map<const Vector> flat(const Matrix& m) { return {m.data(), m.size()}; }
inline Eigen::Map<const Vector> flat(const Vector& v) { return {v.data(), v.size()}; }
}  // namespace detail

/// Calls f(name, flat views...) for every parameter block, walking several
/// identically shaped parameter sets in lockstep.
template <class F, class First, class... Rest>
void for_each_block(F&& f, First& first, Rest&... rest) {
  for (std::size_t l = 0; l < first.layers.size(); ++l) {
    const std::string p = "layers[" + std::to_string(l) + "].";
    f(p + "w_input", detail::flat(first.layers[l].w_input), detail::flat(rest.layers[l].w_input)...);
    f(p + "w_recurrent", detail::flat(first.layers[l].w_recurrent), detail::flat(rest.layers[l].w_recurrent)...);
    f(p + "bias", detail::flat(first.layers[l].bias), detail::flat(rest.layers[l].bias)...);
  }
  f(std::string("head.w"), detail::flat(first.head_w), detail::flat(rest.head_w)...);
  f(std::string("head.b"), detail::flat(first.head_b), detail::flat(rest.head_b)...);
}

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_block([](const std::string&, auto v) { v.setZero(); }, z);
  return z;
}

inline Index parameter_count(const ModelParams& p) {
  Index n = 0;
  for_each_block([&](const std::string&, auto v) { n += v.size(); }, p);
  return n;
}

inline void check_shapes(const ModelParams& p, const ModelConfig& cfg) {
  const Index h = cfg.hidden_size;
  if (static_cast<Index>(p.layers.size()) != cfg.num_layers)
    throw ShapeError("params have " + std::to_string(p.layers.size()) + " layers, config " +
                     std::to_string(cfg.num_layers));
  for (Index l = 0; l < cfg.num_layers; ++l) {
    const auto& L = p.layers[l];
    const Index in = l == 0 ? cfg.input_dim : h;
    const std::string at = "layers[" + std::to_string(l) + "]";
    if (L.w_input.rows() != 4 * h || L.w_input.cols() != in) throw ShapeError(at + ".w_input shape mismatch");
    if (L.w_recurrent.rows() != 4 * h || L.w_recurrent.cols() != h)
      throw ShapeError(at + ".w_recurrent shape mismatch");
    if (L.bias.size() != 4 * h) throw ShapeError(at + ".bias shape mismatch");
  }
  if (p.head_w.rows() != cfg.state_dim || p.head_w.cols() != h) throw ShapeError("head.w shape mismatch");
  if (p.head_b.size() != cfg.state_dim) throw ShapeError("head.b shape mismatch");
}

/// Uniform(-1/sqrt(H), 1/sqrt(H)) for every weight and bias, then forget-gate biases set to 1.
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Index h = cfg.hidden_size;
  const double bound = 1.0 / std::sqrt(static_cast<double>(h));
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> dist(-bound, bound);
  auto fill = [&](auto& m) {
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  };
  ModelParams p;
  for (Index l = 0; l < cfg.num_layers; ++l) {
    LayerParams L;
    L.w_input.resize(4 * h, l == 0 ? cfg.input_dim : h);
    L.w_recurrent.resize(4 * h, h);
    L.bias.resize(4 * h);
    fill(L.w_input);
    fill(L.w_recurrent);
    fill(L.bias);
    L.bias.segment(h, h).setOnes();
    p.layers.push_back(std::move(L));
  }
  p.head_w.resize(cfg.state_dim, h);
  p.head_b.resize(cfg.state_dim);
  fill(p.head_w);
  fill(p.head_b);
  return p;
}

enum class Mode { train, eval };

/// Everything the backward pass needs. Column block [t*B, (t+1)*B) of every
/// matrix holds time step t for the B windows of the batch.
struct ForwardCache {
  Index batch = 0;
  Index length = 0;
  std::vector<Matrix> inputs;   // per layer, in x lB (after dropout)
  std::vector<Matrix> gates;    // per layer, 4H x lB activations
  std::vector<Matrix> cells;    // per layer, H x lB
  std::vector<Matrix> hiddens;  // per layer, H x lB
  std::vector<Matrix> masks;    // per layer, dropout scale on the layer input (empty when unused)
  Matrix predictions;           // d_s x B
};

namespace detail {
inline Eigen::ArrayXXd sigmoid(const Eigen::ArrayXXd& z) { return (1.0 + (-z).exp()).inverse(); }
}  // namespace detail

/// Batched forward pass over windows of identical length. Returns predictions d_s x B.
inline ForwardCache forward_batch(const ModelParams& params, const ModelConfig& cfg,
                                  std::span<const WindowSample> windows, Mode mode, std::uint64_t seed) {
  check_shapes(params, cfg);
  const Index B = static_cast<Index>(windows.size());
  if (B == 0) throw ShapeError("empty batch");
  const Index len = windows[0].length();
  const Index H = cfg.hidden_size;
  ForwardCache cache;
  cache.batch = B;
  cache.length = len;

  Matrix x(cfg.input_dim, len * B);
  for (Index b = 0; b < B; ++b) {
    const auto& w = windows[static_cast<std::size_t>(b)].rows;
    if (w.rows() != len || w.cols() != cfg.input_dim)
      throw ShapeError("window shape " + shape_str(w.rows(), w.cols()) + ", expected " +
                       shape_str(len, cfg.input_dim));
    if (!w.allFinite()) throw ShapeError("window contains non-finite values");
    for (Index t = 0; t < len; ++t) x.col(t * B + b) = w.row(t).transpose();
  }

  const bool drop = mode == Mode::train && cfg.dropout_rate > 0.0;
  Rng rng = make_rng(seed);
  std::bernoulli_distribution keep(1.0 - cfg.dropout_rate);
  const double scale = drop ? 1.0 / (1.0 - cfg.dropout_rate) : 1.0;

  for (Index l = 0; l < cfg.num_layers; ++l) {
    const auto& L = params.layers[l];
    Matrix mask;
    if (l > 0 && drop) {
      mask.resize(x.rows(), x.cols());
      for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
      x.array() *= mask.array();
    }
    Matrix zin = L.w_input * x;
    zin.colwise() += L.bias;
    Matrix gates(4 * H, len * B), cells(H, len * B), hidden(H, len * B);
    for (Index t = 0; t < len; ++t) {
      Eigen::ArrayXXd z = zin.middleCols(t * B, B).array();
      if (t > 0) z += (L.w_recurrent * hidden.middleCols((t - 1) * B, B)).array();
      Eigen::ArrayXXd i = detail::sigmoid(z.topRows(H));
      Eigen::ArrayXXd f = detail::sigmoid(z.middleRows(H, H));
      Eigen::ArrayXXd g = z.middleRows(2 * H, H).tanh();
      Eigen::ArrayXXd o = detail::sigmoid(z.bottomRows(H));
      Eigen::ArrayXXd c = i * g;
      if (t > 0) c += f * cells.middleCols((t - 1) * B, B).array();
      gates.block(0, t * B, H, B) = i.matrix();
      gates.block(H, t * B, H, B) = f.matrix();
      gates.block(2 * H, t * B, H, B) = g.matrix();
      gates.block(3 * H, t * B, H, B) = o.matrix();
      cells.middleCols(t * B, B) = c.matrix();
      hidden.middleCols(t * B, B) = (o * c.tanh()).matrix();
    }
    cache.inputs.push_back(std::move(x));
    cache.masks.push_back(std::move(mask));
    cache.gates.push_back(std::move(gates));
    cache.cells.push_back(std::move(cells));
    x = hidden;
    cache.hiddens.push_back(std::move(hidden));
  }
  cache.predictions = params.head_w * cache.hiddens.back().rightCols(B);
  cache.predictions.colwise() += params.head_b;
  return cache;
}

/// Single-window forward pass.
inline std::pair<Vector, ForwardCache> forward(const ModelParams& params, const ModelConfig& cfg,
                                               const WindowSample& window, Mode mode, std::uint64_t seed) {
  auto cache = forward_batch(params, cfg, std::span<const WindowSample>(&window, 1), mode, seed);
  Vector pred = cache.predictions.col(0);
  return {std::move(pred), std::move(cache)};
}

/// Recomputes the head output from cached top-layer hidden states.
inline Matrix predictions_from_cache(const ModelParams& params, const ForwardCache& cache) {
  Matrix out = params.head_w * cache.hiddens.back().rightCols(cache.batch);
  out.colwise() += params.head_b;
  return out;
}

struct BackwardResult {
  ParamGrads grads;
  std::vector<RowMatrix> input_grads;  // per window, l x n
};

/// Exact gradients of sum(grad_prediction .* prediction) with respect to every
/// parameter and every input row.
inline BackwardResult backward(const ModelParams& params, const ModelConfig& cfg, const ForwardCache& cache,
                               const Matrix& grad_prediction) {
  check_shapes(params, cfg);
  const Index B = cache.batch;
  const Index len = cache.length;
  const Index H = cfg.hidden_size;
  if (static_cast<Index>(cache.inputs.size()) != cfg.num_layers || cache.hiddens.empty() ||
      cache.hiddens.back().rows() != H || cache.inputs.front().rows() != cfg.input_dim ||
      cache.inputs.front().cols() != len * B)
    throw ShapeError("forward cache does not match model parameters");
  if (grad_prediction.rows() != cfg.state_dim || grad_prediction.cols() != B)
    throw ShapeError("grad_prediction shape " + shape_str(grad_prediction.rows(), grad_prediction.cols()) +
                     ", expected " + shape_str(cfg.state_dim, B));

  BackwardResult out;
  out.grads.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  out.grads.head_w = grad_prediction * cache.hiddens.back().rightCols(B).transpose();
  out.grads.head_b = grad_prediction.rowwise().sum();

  Matrix dh_all = Matrix::Zero(H, len * B);
  dh_all.rightCols(B) = params.head_w.transpose() * grad_prediction;

  for (Index l = cfg.num_layers - 1; l >= 0; --l) {
    const auto& L = params.layers[l];
    const Matrix& gates = cache.gates[l];
    const Matrix& cells = cache.cells[l];
    const Matrix& hidden = cache.hiddens[l];
    Matrix dz(4 * H, len * B);
    Eigen::ArrayXXd dh_next = Eigen::ArrayXXd::Zero(H, B);
    Eigen::ArrayXXd dc_next = Eigen::ArrayXXd::Zero(H, B);
    for (Index t = len - 1; t >= 0; --t) {
      const auto i = gates.block(0, t * B, H, B).array();
      const auto f = gates.block(H, t * B, H, B).array();
      const auto g = gates.block(2 * H, t * B, H, B).array();
      const auto o = gates.block(3 * H, t * B, H, B).array();
      const Eigen::ArrayXXd tc = cells.middleCols(t * B, B).array().tanh();
      const Eigen::ArrayXXd dh = dh_all.middleCols(t * B, B).array() + dh_next;
      const Eigen::ArrayXXd dc = dh * o * (1.0 - tc.square()) + dc_next;
      dz.block(0, t * B, H, B) = (dc * g * i * (1.0 - i)).matrix();
      if (t > 0)
        dz.block(H, t * B, H, B) = (dc * cells.middleCols((t - 1) * B, B).array() * f * (1.0 - f)).matrix();
      else
        dz.block(H, t * B, H, B).setZero();
      dz.block(2 * H, t * B, H, B) = (dc * i * (1.0 - g.square())).matrix();
      dz.block(3 * H, t * B, H, B) = (dh * tc * o * (1.0 - o)).matrix();
      dc_next = dc * f;
      if (t > 0) dh_next = (L.w_recurrent.transpose() * dz.middleCols(t * B, B)).array();
    }
    auto& G = out.grads.layers[static_cast<std::size_t>(l)];
    G.w_input = dz * cache.inputs[l].transpose();
    if (len > 1)
      G.w_recurrent = dz.rightCols((len - 1) * B) * hidden.leftCols((len - 1) * B).transpose();
    else
      G.w_recurrent = Matrix::Zero(4 * H, H);
    G.bias = dz.rowwise().sum();
    Matrix dx = L.w_input.transpose() * dz;
    if (cache.masks[l].size() != 0) dx.array() *= cache.masks[l].array();
    if (l > 0) {
      dh_all = std::move(dx);
    } else {
      out.input_grads.resize(static_cast<std::size_t>(B));
      for (Index b = 0; b < B; ++b) {
        RowMatrix gi(len, cfg.input_dim);
        for (Index t = 0; t < len; ++t) gi.row(t) = dx.col(t * B + b).transpose();
        out.input_grads[static_cast<std::size_t>(b)] = std::move(gi);
      }
    }
  }
  return out;
}

/// Eval-mode predictor over frozen parameters.
struct LstmPredictor {
  const ModelParams* params = nullptr;
  const ModelConfig* config = nullptr;

  Index state_dim() const { return config->state_dim; }
  Vector predict(const WindowSample& window) const {
    return forward(*params, *config, window, Mode::eval, 0).first;
  }
};

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline OptimizerState make_optimizer(const ModelParams& like, double lr = 1e-3, double beta1 = 0.9,
                                     double beta2 = 0.999, double eps = 1e-8) {
  return OptimizerState{zeros_like(like), zeros_like(like), 0, lr, beta1, beta2, eps};
}

/// Adam with bias correction. Non-finite gradients are rejected before any state changes.
inline std::pair<ModelParams, OptimizerState> adam_step(ModelParams params, const ParamGrads& grads,
                                                        OptimizerState opt) {
  for_each_block(
      [](const std::string& name, auto, auto g) {
        if (!g.allFinite()) throw NumericError("non-finite gradient in " + name);
      },
      params, grads);
  opt.step += 1;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
  for_each_block(
      [&](const std::string&, auto p, auto g, auto m, auto v) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * g;
        v = (opt.beta2 * v.array() + (1.0 - opt.beta2) * g.array().square()).matrix();
        p.array() -= opt.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + opt.eps);
      },
      params, grads, opt.m, opt.v);
  return {std::move(params), std::move(opt)};
}

inline double global_norm(const ParamGrads& g) {
  double sq = 0.0;
  for_each_block([&](const std::string&, auto v) { sq += v.squaredNorm(); }, g);
  return std::sqrt(sq);
}

/// Rescales g in place so its global norm is at most max_norm; returns the norm before clipping.
inline double clip_global_norm(ParamGrads& g, double max_norm) {
  const double n = global_norm(g);
  if (n > max_norm && n > 0.0) {
    const double s = max_norm / n;
    for_each_block([&](const std::string&, auto v) { v *= s; }, g);
  }
  return n;
}

/// a += s * b over every block.
inline void accumulate(ParamGrads& a, const ParamGrads& b, double s = 1.0) {
  for_each_block([&](const std::string&, auto x, auto y) { x += s * y; }, a, b);
}

}  // namespace dadsim
