#pragma once

#include "dadsim/common.hpp"
#include "dadsim/dataset.hpp"

#include <concepts>
#include <utility>

namespace dadsim {

/// Anything that maps an l x n history window to the next d_s-dimensional state.
template <class P>
concept Predictor = requires(const P& p, const WindowSample& w) {
  { p.predict(w) } -> std::convertible_to<Vector>;
  { p.state_dim() } -> std::convertible_to<Index>;
};

/// Closed-loop simulator state: rows at or before the reset point are recorded data,
/// later rows hold the simulator's own predictions.
struct SimState {
  WindowSample window;
  Index t = 0;  // absolute index of the newest window row
  Index horizon_elapsed = 0;
  Index state_dim = 0;
};

struct Trajectory {
  RowMatrix states;    // T x d_s, row j predicts step t0 + 1 + j
  RowMatrix controls;  // T x a_s
};

inline SimState reset(const TimeSeriesDataset& ds, Index t0, Index l) {
  if (t0 < l - 1 || t0 >= ds.rows())
    throw ShapeError("reset point " + std::to_string(t0) + " needs " + std::to_string(l) + " rows of history");
  return SimState{make_window(ds, t0, l), t0, 0, ds.state_dim};
}

inline SimState reset_from_window(const WindowSample& w, Index state_dim) {
  return SimState{w, w.anchor_index, 0, state_dim};
}

/// Predicts the next state, drops the oldest window row and appends (prediction, action).
template <Predictor P>
std::pair<SimState, Vector> step(const P& model, SimState sim, const Vector& action) {
  const Index n = sim.window.rows.cols();
  const Index ds = sim.state_dim;
  if (action.size() != n - ds)
    throw ShapeError("action has " + std::to_string(action.size()) + " entries, expected " + std::to_string(n - ds));
  if (!action.allFinite()) throw ShapeError("action contains non-finite values");
  Vector next = model.predict(sim.window);
  if (next.size() != ds) throw ShapeError("model returned wrong state dimension");
  if (!next.allFinite())
    throw DivergenceError("simulator diverged at step " + std::to_string(sim.horizon_elapsed), sim.horizon_elapsed);
  auto& rows = sim.window.rows;
  const Index l = rows.rows();
  if (l > 1) rows.topRows(l - 1) = rows.bottomRows(l - 1).eval();
  rows.row(l - 1).head(ds) = next.transpose();
  rows.row(l - 1).tail(n - ds) = action.transpose();
  sim.t += 1;
  sim.window.anchor_index = sim.t;
  sim.horizon_elapsed += 1;
  return {std::move(sim), std::move(next)};
}

/// Chains T steps from an initial window under the given control sequence (T x a_s).
/// `on_step(j, window)` sees the window fed to the model at step j.
template <Predictor P, class OnStep>
Trajectory rollout_from(const P& model, const WindowSample& initial, Index state_dim, const RowMatrix& controls,
                        OnStep&& on_step) {
  if (!controls.allFinite()) throw ShapeError("controls contain non-finite values");
  const Index T = controls.rows();
  Trajectory traj;
  traj.states.resize(T, state_dim);
  traj.controls = controls;
  SimState sim = reset_from_window(initial, state_dim);
  for (Index j = 0; j < T; ++j) {
    on_step(j, std::as_const(sim.window));
    Vector action = controls.row(j).transpose();
    auto [next_sim, pred] = step(model, std::move(sim), action);
    sim = std::move(next_sim);
    traj.states.row(j) = pred.transpose();
  }
  return traj;
}

template <Predictor P>
Trajectory rollout_from(const P& model, const WindowSample& initial, Index state_dim, const RowMatrix& controls) {
  return rollout_from(model, initial, state_dim, controls, [](Index, const WindowSample&) {});
}

template <Predictor P>
Trajectory rollout(const P& model, const TimeSeriesDataset& ds, Index t0, const RowMatrix& controls, Index l) {
  const SimState s = reset(ds, t0, l);
  if (controls.cols() != ds.control_dim) throw ShapeError("controls width does not match dataset");
  return rollout_from(model, s.window, ds.state_dim, controls);
}

/// RL-style wrapper holding the model and recorded data.
template <Predictor P>
class Environment {
 public:
  Environment(const P& model, const TimeSeriesDataset& data, Index history)
      : model_(&model), data_(&data), history_(history) {}

  const SimState& reset(Index t0) {
    state_ = dadsim::reset(*data_, t0, history_);
    return state_;
  }

  Vector step(const Vector& action) {
    auto [s, pred] = dadsim::step(*model_, std::move(state_), action);
    state_ = std::move(s);
    return pred;
  }

  const SimState& state() const { return state_; }

 private:
  const P* model_;
  const TimeSeriesDataset* data_;
  Index history_;
  SimState state_;
};

/// The synthetic plant's noise-free transition exposed as a predictor over raw (unscaled) rows.
struct PlantPredictor {
  SyntheticPlantConfig config;

  Index state_dim() const { return 3; }
  Vector predict(const WindowSample& w) const {
    const auto last = w.rows.row(w.rows.rows() - 1);
    const PlantState s{last(0), last(1), last(2)};
    const PlantState n = plant_step(config, s, last(3), w.anchor_index);
    Vector out(3);
    out << n.phosphate, n.inflow, n.aux;
    return out;
  }
};

}  // namespace dadsim
