#pragma once

#include "dadsim/checkpoint.hpp"
#include "dadsim/common.hpp"
#include "dadsim/dataset.hpp"
#include "dadsim/losses.hpp"
#include "dadsim/lstm.hpp"
#include "dadsim/rng.hpp"
#include "dadsim/simulator.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <vector>

namespace dadsim {

// ---------------------------------------------------------------------------
// Teacher-forced base training

struct TrainConfig {
  Index epochs = 20;
  Index batch_size = 64;
  double learning_rate = 1e-3;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  Index pairs_per_epoch = 0;  // 0 = every training pair each epoch
  Index max_validation_pairs = 2048;
  double clip_norm = 5.0;

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
      throw ConfigError("validation_fraction must be in (0, 1)");
    if (pairs_per_epoch < 0) throw ConfigError("pairs_per_epoch must be >= 0");
    if (max_validation_pairs < 1) throw ConfigError("max_validation_pairs must be >= 1");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  }
};

using LogFn = std::function<void(const std::string&)>;

inline LogFn stderr_log() {
  return [](const std::string& msg) { std::cerr << msg << '\n'; };
}

/// Single-step MSE of the eval-mode model over the given window anchors (next-state targets).
inline double single_step_mse(const ModelParams& params, const ModelConfig& cfg, const TimeSeriesDataset& ds,
                              const std::vector<Index>& anchors, Index chunk = 256) {
  if (anchors.empty()) throw ConfigError("no pairs to evaluate");
  double sum = 0.0;
  std::vector<WindowSample> windows;
  for (std::size_t begin = 0; begin < anchors.size(); begin += static_cast<std::size_t>(chunk)) {
    const std::size_t end = std::min(anchors.size(), begin + static_cast<std::size_t>(chunk));
    windows.clear();
    for (std::size_t i = begin; i < end; ++i) windows.push_back(make_window(ds, anchors[i], cfg.history_length));
    const auto cache = forward_batch(params, cfg, windows, Mode::eval, 0);
    for (std::size_t i = begin; i < end; ++i) {
      const Vector y = ds.values.row(anchors[i] + 1).head(cfg.state_dim).transpose();
      sum += mse_single(cache.predictions.col(static_cast<Index>(i - begin)), y);
    }
  }
  return sum / static_cast<double>(anchors.size());
}

/// Minimizes single-step MSE over shuffled (window, next state) pairs and returns the
/// parameters with the best validation MSE. `scaled` must already be min-max scaled with `scaler`.
inline ModelCheckpoint train_base(const TimeSeriesDataset& scaled, const Scaler& scaler, const TrainConfig& cfg,
                                  const ModelConfig& mcfg, const LogFn& log = {}) {
  cfg.validate();
  mcfg.validate();
  scaled.validate();
  if (scaled.width() != mcfg.input_dim || scaled.state_dim != mcfg.state_dim)
    throw ConfigError("model dimensions do not match dataset columns");
  const Index l = mcfg.history_length;
  const Index n_pairs = scaled.rows() - l;  // anchors l-1 .. rows-2
  if (n_pairs < 2) throw ConfigError("dataset too short for training windows");
  const Index n_val = std::max<Index>(1, static_cast<Index>(std::floor(cfg.validation_fraction * n_pairs)));
  const Index n_train = n_pairs - n_val;
  if (n_train < 1) throw ConfigError("validation_fraction leaves no training pairs");

  std::vector<Index> train_anchors(static_cast<std::size_t>(n_train));
  std::iota(train_anchors.begin(), train_anchors.end(), l - 1);
  std::vector<Index> val_anchors;
  const Index stride = std::max<Index>(1, (n_val + cfg.max_validation_pairs - 1) / cfg.max_validation_pairs);
  for (Index i = 0; i < n_val; i += stride) val_anchors.push_back(l - 1 + n_train + i);

  ModelCheckpoint ck;
  ck.config = mcfg;
  ck.scaler = scaler;
  ck.optimizer.learning_rate = cfg.learning_rate;
  ck.optimizer.clip_norm = cfg.clip_norm;
  ck.meta.stage = "base";
  ck.meta.seed = cfg.seed;
  ck.meta.epochs = cfg.epochs;
  ck.meta.loss = LossConfig{LossKind::mse, 0.5, 1e-2};

  ModelParams params = init_params(mcfg, derive_seed(cfg.seed, {0x1417}));
  OptimizerState opt = make_optimizer(params, cfg.learning_rate, ck.optimizer.beta1, ck.optimizer.beta2,
                                      ck.optimizer.epsilon);
  ModelParams best = params;
  double best_val = single_step_mse(params, mcfg, scaled, val_anchors);
  Index best_epoch = 0;
  ck.meta.history.push_back({{"epoch", 0}, {"train_loss", nullptr}, {"validation_mse", best_val}, {"saved", true}});

  std::vector<WindowSample> windows;
  for (Index epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = make_rng(derive_seed(cfg.seed, {0xE90C, static_cast<std::uint64_t>(epoch)}));
    std::vector<Index> order = train_anchors;
    std::shuffle(order.begin(), order.end(), rng);
    if (cfg.pairs_per_epoch > 0 && cfg.pairs_per_epoch < n_train)
      order.resize(static_cast<std::size_t>(cfg.pairs_per_epoch));

    double loss_sum = 0.0;
    Index batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const Index B = static_cast<Index>(end - begin);
      windows.clear();
      Matrix targets(mcfg.state_dim, B);
      for (std::size_t i = begin; i < end; ++i) {
        windows.push_back(make_window(scaled, order[i], l));
        targets.col(static_cast<Index>(i - begin)) = scaled.values.row(order[i] + 1).head(mcfg.state_dim).transpose();
      }
      const auto cache = forward_batch(params, mcfg, windows, Mode::train,
                                       derive_seed(cfg.seed, {0xD20F, static_cast<std::uint64_t>(epoch),
                                                              static_cast<std::uint64_t>(batches)}));
      const Matrix diff = cache.predictions - targets;
      const double loss = diff.squaredNorm() / static_cast<double>(diff.size());
      if (!std::isfinite(loss))
        throw NumericError("training loss is not finite at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches));
      auto br = backward(params, mcfg, cache, 2.0 * diff / static_cast<double>(diff.size()));
      clip_global_norm(br.grads, cfg.clip_norm);
      std::tie(params, opt) = adam_step(std::move(params), br.grads, std::move(opt));
      loss_sum += loss;
      ++batches;
    }
    const double val = single_step_mse(params, mcfg, scaled, val_anchors);
    const bool saved = val < best_val;
    if (saved) {
      best_val = val;
      best = params;
      best_epoch = epoch;
    }
    const double train_loss = batches > 0 ? loss_sum / static_cast<double>(batches) : 0.0;
    ck.meta.history.push_back(
        {{"epoch", epoch}, {"train_loss", train_loss}, {"validation_mse", val}, {"saved", saved}});
    if (log)
      log("epoch " + std::to_string(epoch) + " train_mse " + csv::format_double(train_loss) + " val_mse " +
          csv::format_double(val) + (saved ? " *" : ""));
  }
  ck.params = std::move(best);
  ck.meta.metrics = {{"best_validation_mse", best_val},
                     {"best_epoch", best_epoch},
                     {"train_pairs", n_train},
                     {"validation_pairs", static_cast<Index>(val_anchors.size())}};
  return ck;
}

// ---------------------------------------------------------------------------
// Random horizons

struct HorizonDistribution {
  Index min_el = 1;
  Index max_el = 1;

  void validate() const {
    if (min_el < 1 || max_el < min_el) throw ConfigError("horizon distribution needs 1 <= min_el <= max_el");
  }
  double mean() const { return 0.5 * static_cast<double>(min_el + max_el); }
};

/// Uniform on [min_el, max_el] inclusive.
inline Index sample_horizon(const HorizonDistribution& dist, Rng& rng) {
  dist.validate();
  return uniform_int(rng, dist.min_el, dist.max_el);
}

// ---------------------------------------------------------------------------
// Iterative improvement on the model's own rollouts

struct ImprovementConfig {
  RegimeConfig regime;
  Index epochs = 50;
  LossConfig loss{LossKind::dilate, 0.6, 1e-2};
  Index test_horizon = 1440;
  Index test_episodes = 5;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  bool per_step = false;  // one-step DaD on aggregated pairs instead of trajectory backpropagation

  void validate() const {
    regime.validate();
    loss.validate();
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (test_horizon < 1) throw ConfigError("test_horizon must be >= 1");
    if (test_episodes < 1) throw ConfigError("test_episodes must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
  }
};

struct EpisodeReport {
  Index epoch = 0;
  Index episode = 0;
  const EpisodePair* pair = nullptr;
  const ModelParams* params_before = nullptr;
  const Trajectory* trajectory = nullptr;
  double loss = 0.0;
};

/// Instrumentation hooks; all optional.
struct ImproveObserver {
  std::function<void(Index epoch, Index episode, Index step, const WindowSample& window, const EpisodePair& pair)>
      on_window;
  std::function<void(const EpisodeReport&)> on_episode;
  LogFn log;
};

/// Fixed validation episodes for the per-epoch test simulation: up to `count` day-aligned
/// starts whose `horizon`-step targets lie in rows [begin, end).
inline std::vector<EpisodePair> test_simulation_episodes(const TimeSeriesDataset& ds, Index l, Index begin, Index end,
                                                         Index horizon, Index count) {
  std::vector<EpisodePair> out;
  const Index per_day = ds.rows_per_day();
  for (Index start = ((begin + per_day - 1) / per_day) * per_day - 1;
       start + horizon < end && static_cast<Index>(out.size()) < count; start += per_day) {
    if (start < l - 1 || start + 1 < begin) continue;
    out.push_back(make_episode(ds, l, start, horizon));
  }
  if (out.empty())
    throw ConfigError("validation rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                      ") cannot hold a test simulation of " + std::to_string(horizon) + " steps");
  return out;
}

/// Mean multi-step MSE of closed-loop rollouts; infinite if any rollout diverges.
inline double simulation_loss(const ModelParams& params, const ModelConfig& cfg,
                              const std::vector<EpisodePair>& episodes) {
  const LstmPredictor model{&params, &cfg};
  double sum = 0.0;
  for (const auto& ep : episodes) {
    try {
      const auto traj = rollout_from(model, ep.input, cfg.state_dim, ep.controls);
      sum += mse_multi(traj.states, ep.targets);
    } catch (const DivergenceError&) {
      return std::numeric_limits<double>::infinity();
    }
  }
  return sum / static_cast<double>(episodes.size());
}

struct EpisodeGradient {
  bool diverged = false;
  double loss = 0.0;
  Trajectory trajectory;
  ParamGrads grads;
};

/// Rolls the model through one episode on its own predictions and differentiates the
/// trajectory loss through every feedback connection.
inline EpisodeGradient episode_gradient(const ModelParams& params, const ModelConfig& cfg, const EpisodePair& ep,
                                        const LossConfig& loss, bool per_step, std::uint64_t dropout_seed,
                                        const std::function<void(Index, const WindowSample&)>& on_window = {}) {
  EpisodeGradient out;
  const Index T = ep.horizon();
  const Index l = cfg.history_length;
  const Index d = cfg.state_dim;
  std::vector<WindowSample> windows;
  windows.reserve(static_cast<std::size_t>(T));
  const LstmPredictor model{&params, &cfg};
  try {
    out.trajectory = rollout_from(model, ep.input, d, ep.controls, [&](Index j, const WindowSample& w) {
      if (on_window) on_window(j, w);
      windows.push_back(w);
    });
  } catch (const DivergenceError&) {
    out.diverged = true;
    return out;
  }

  RowMatrix G;
  if (per_step) {
    out.loss = mse_multi(out.trajectory.states, ep.targets);
    G = 2.0 * (out.trajectory.states - ep.targets) / static_cast<double>(ep.targets.size());
  } else {
    auto lv = loss_with_grad(loss, out.trajectory.states, ep.targets);
    out.loss = lv.value;
    G = std::move(lv.grad);
  }
  if (!std::isfinite(out.loss)) throw NumericError("improvement loss is not finite");

  if (per_step) {
    const auto cache = forward_batch(params, cfg, windows, Mode::train, dropout_seed);
    Matrix gp = G.transpose();
    out.grads = backward(params, cfg, cache, gp).grads;
    return out;
  }

  out.grads = zeros_like(params);
  for (Index j = T - 1; j >= 0; --j) {
    const auto& w = windows[static_cast<std::size_t>(j)];
    const auto [pred, cache] = forward(params, cfg, w, Mode::train, derive_seed(dropout_seed, {static_cast<std::uint64_t>(j)}));
    Matrix gp = G.row(j).transpose();
    const auto br = backward(params, cfg, cache, gp);
    accumulate(out.grads, br.grads);
    // Window row r holds absolute step anchor + j - l + 1 + r; rows past the anchor are predictions.
    const auto& gin = br.input_grads[0];
    for (Index r = 0; r < l; ++r) {
      const Index q = j - l + 1 + r;
      if (q >= 1) G.row(q - 1) += gin.row(r).head(d);
    }
  }
  return out;
}

inline ModelCheckpoint improve_dad(const ModelCheckpoint& base, const TimeSeriesDataset& scaled,
                                   const DataSplit& split, const ImprovementConfig& icfg,
                                   const ImproveObserver& observer = {}) {
  icfg.validate();
  base.config.validate();
  check_shapes(base.params, base.config);
  if (scaled.width() != base.config.input_dim || scaled.state_dim != base.config.state_dim)
    throw ConfigError("checkpoint dimensions do not match dataset columns");
  const ModelConfig& cfg = base.config;
  const Index l = cfg.history_length;
  const auto log = [&](const std::string& m) {
    if (observer.log) observer.log(m);
  };

  const TimeSeriesDataset train = slice_rows(scaled, 0, split.train_end);
  const auto test_eps =
      test_simulation_episodes(scaled, l, split.train_end, split.validation_end, icfg.test_horizon, icfg.test_episodes);
  // Fail early when the regime cannot produce episodes.
  (void)build_episodes(train, l, icfg.regime);

  ModelCheckpoint out = base;
  out.meta.stage = "improved";
  out.meta.seed = icfg.seed;
  out.meta.epochs = icfg.epochs;
  out.meta.loss = icfg.loss;
  out.optimizer.learning_rate = icfg.learning_rate;
  out.optimizer.clip_norm = icfg.clip_norm;
  out.meta.history = nlohmann::json::array();

  ModelParams params = base.params;
  OptimizerState opt = make_optimizer(params, icfg.learning_rate, out.optimizer.beta1, out.optimizer.beta2,
                                      out.optimizer.epsilon);
  const double base_loss = simulation_loss(params, cfg, test_eps);
  double best_loss = base_loss;
  Index best_epoch = 0;
  Index skipped_total = 0;
  out.meta.history.push_back(
      {{"epoch", 0}, {"mean_episode_loss", nullptr}, {"test_sim_loss", base_loss}, {"saved", true}});
  log("epoch 0 test_sim_mse " + csv::format_double(base_loss));

  for (Index epoch = 1; epoch <= icfg.epochs; ++epoch) {
    RegimeConfig rc = icfg.regime;
    rc.seed = derive_seed(icfg.regime.seed, {static_cast<std::uint64_t>(epoch)});
    const auto episodes = build_episodes(train, l, rc);
    double loss_sum = 0.0;
    Index used = 0, skipped = 0;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      const auto& ep = episodes[e];
      const std::uint64_t dseed =
          derive_seed(icfg.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(e)});
      std::function<void(Index, const WindowSample&)> hook;
      if (observer.on_window)
        hook = [&](Index j, const WindowSample& w) { observer.on_window(epoch, static_cast<Index>(e), j, w, ep); };
      auto eg = episode_gradient(params, cfg, ep, icfg.loss, icfg.per_step, dseed, hook);
      if (eg.diverged) {
        ++skipped;
        log("warning: epoch " + std::to_string(epoch) + " episode " + std::to_string(e) + " (start " +
            std::to_string(ep.start_index) + ") diverged during rollout; skipped");
        continue;
      }
      if (observer.on_episode)
        observer.on_episode(EpisodeReport{epoch, static_cast<Index>(e), &ep, &params, &eg.trajectory, eg.loss});
      clip_global_norm(eg.grads, icfg.clip_norm);
      std::tie(params, opt) = adam_step(std::move(params), eg.grads, std::move(opt));
      loss_sum += eg.loss;
      ++used;
    }
    skipped_total += skipped;
    if (2 * skipped > static_cast<Index>(episodes.size()))
      throw NumericError("epoch " + std::to_string(epoch) + ": " + std::to_string(skipped) + " of " +
                         std::to_string(episodes.size()) + " episodes diverged; aborting improvement");
    const double test_loss = simulation_loss(params, cfg, test_eps);
    const bool saved = test_loss < best_loss;
    if (saved) {
      best_loss = test_loss;
      best_epoch = epoch;
      out.params = params;
    }
    const double mean_loss = used > 0 ? loss_sum / static_cast<double>(used) : 0.0;
    out.meta.history.push_back(
        {{"epoch", epoch}, {"mean_episode_loss", mean_loss}, {"test_sim_loss", test_loss}, {"saved", saved}});
    log("epoch " + std::to_string(epoch) + " episodes " + std::to_string(used) + " mean_loss " +
        csv::format_double(mean_loss) + " test_sim_mse " + csv::format_double(test_loss) + (saved ? " *" : ""));
  }
  out.meta.metrics = {{"base_test_sim_loss", base_loss}, {"best_test_sim_loss", best_loss},
                      {"best_epoch", best_epoch},        {"skipped_episodes", skipped_total},
                      {"experiment", to_string(icfg.regime.regime)}, {"min_el", icfg.regime.min_el},
                      {"max_el", icfg.regime.max_el},    {"per_step", icfg.per_step},
                      {"test_horizon", icfg.test_horizon}};
  return out;
}

}  // namespace dadsim
