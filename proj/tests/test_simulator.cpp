#include "dadsim/simulator.hpp"
#include "dadsim/lstm.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace dadsim;
using testing_support::make_dataset;

namespace {

/// Predicts the mean of the window's first column for every state, and records what it saw.
struct MeanPredictor {
  Index dims = 2;
  mutable std::vector<WindowSample> seen;

  Index state_dim() const { return dims; }
  Vector predict(const WindowSample& w) const {
    seen.push_back(w);
    return Vector::Constant(dims, w.rows.col(0).mean());
  }
};

struct NanAfter {
  Index ok_steps = 3;
  mutable Index calls = 0;
  Index state_dim() const { return 1; }
  Vector predict(const WindowSample&) const {
    return Vector::Constant(1, calls++ < ok_steps ? 0.5 : std::nan(""));
  }
};

TimeSeriesDataset counting(Index rows) {
  RowMatrix v(rows, 3);
  for (Index r = 0; r < rows; ++r) v.row(r) << r, -r, 1000 + r;
  return make_dataset(v, 2);
}

}  // namespace

TEST(Step, ShiftsWindowAndAppendsPrediction) {
  const auto ds = counting(20);
  MeanPredictor m;
  SimState s = reset(ds, 4, 5);
  EXPECT_EQ(s.t, 4);
  Vector a(1);
  a << 7.0;
  auto [next, pred] = step(m, s, a);
  EXPECT_EQ(next.t, 5);
  EXPECT_EQ(next.horizon_elapsed, 1);
  EXPECT_DOUBLE_EQ(pred[0], 2.0);
  EXPECT_EQ(next.window.rows.topRows(4), s.window.rows.bottomRows(4));
  EXPECT_DOUBLE_EQ(next.window.rows(4, 0), 2.0);
  EXPECT_DOUBLE_EQ(next.window.rows(4, 2), 7.0);
}

TEST(Step, RejectsWrongActionShape) {
  const auto ds = counting(20);
  MeanPredictor m;
  EXPECT_THROW(step(m, reset(ds, 4, 5), Vector::Zero(2)), ShapeError);
  EXPECT_THROW(reset(ds, 3, 5), ShapeError);
}

TEST(Rollout, FeedsOnlyOwnPredictionsAfterHistory) {
  const auto ds = counting(40);
  MeanPredictor m;
  const Index l = 4, T = 10, t0 = 5;
  const RowMatrix controls = ds.values.block(t0 + 1, 2, T, 1);
  const auto traj = rollout(m, ds, t0, controls, l);
  ASSERT_EQ(m.seen.size(), static_cast<std::size_t>(T));
  EXPECT_EQ(traj.states.rows(), T);
  for (Index j = 0; j < T; ++j) {
    const auto& w = m.seen[static_cast<std::size_t>(j)];
    EXPECT_EQ(w.anchor_index, t0 + j);
    for (Index r = 0; r < l; ++r) {
      const Index abs = t0 + j - l + 1 + r;
      if (abs <= t0) {
        EXPECT_EQ(w.rows.row(r), ds.values.row(abs)) << "step " << j << " row " << r;
      } else {
        EXPECT_EQ(w.rows.row(r).head(2), traj.states.row(abs - t0 - 1)) << "step " << j << " row " << r;
        EXPECT_EQ(w.rows(r, 2), controls(abs - t0 - 1, 0));
      }
    }
  }
}

TEST(Rollout, ReproducesNoiseFreePlantExactly) {
  SyntheticPlantConfig c;
  c.days = 1;
  c.noise_std = 0.0;
  c.seed = 3;
  const auto ds = gen_synthetic(c);
  const PlantPredictor plant{c};
  const Index t0 = 100, T = 600;
  const auto traj = rollout(plant, ds, t0, ds.values.block(t0 + 1, 3, T, 1), 10);
  EXPECT_EQ(traj.states, ds.values.block(t0 + 1, 0, T, 3));
}

TEST(Rollout, DivergenceReportsStep) {
  const RowMatrix v = RowMatrix::Zero(10, 2);
  const auto ds = make_dataset(v, 1);
  try {
    rollout(NanAfter{3}, ds, 2, RowMatrix::Zero(5, 1), 3);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 3);
  }
}

TEST(Rollout, ZeroStepsAndBadControls) {
  const auto ds = counting(20);
  MeanPredictor m;
  EXPECT_EQ(rollout(m, ds, 4, RowMatrix(0, 1), 5).states.rows(), 0);
  RowMatrix bad = RowMatrix::Zero(3, 1);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(rollout(m, ds, 4, bad, 5), ShapeError);
  EXPECT_THROW(rollout(m, ds, 4, RowMatrix::Zero(3, 2), 5), ShapeError);
}

TEST(Environment, ResetAndStep) {
  const auto ds = counting(30);
  MeanPredictor m;
  Environment env(m, ds, 5);
  env.reset(9);
  Vector a(1);
  a << 1.0;
  const Vector p1 = env.step(a);
  const Vector p2 = env.step(a);
  EXPECT_EQ(env.state().horizon_elapsed, 2);
  EXPECT_EQ(env.state().t, 11);
  const auto traj = rollout(MeanPredictor{}, ds, 9, RowMatrix::Ones(2, 1), 5);
  EXPECT_EQ(p1.transpose(), traj.states.row(0));
  EXPECT_EQ(p2.transpose(), traj.states.row(1));
}

TEST(Rollout, LstmPredictorIsDeterministic) {
  ModelConfig c;
  c.input_dim = 3;
  c.state_dim = 2;
  c.hidden_size = 5;
  c.history_length = 6;
  const auto p = init_params(c, 1);
  const auto ds = counting(40);
  const LstmPredictor m{&p, &c};
  const RowMatrix u = RowMatrix::Zero(12, 1);
  EXPECT_EQ(rollout(m, ds, 10, u, 6).states, rollout(m, ds, 10, u, 6).states);
}
