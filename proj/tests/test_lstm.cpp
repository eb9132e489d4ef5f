#include "dadsim/lstm.hpp"
#include "oracles/finite_diff.hpp"
#include "oracles/scalar_lstm.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace dadsim;
using testing_support::random_rows;
using testing_support::to_rows;
using testing_support::to_scalar;

namespace {

ModelConfig small_config(Index layers = 2, double dropout = 0.0) {
  ModelConfig c;
  c.input_dim = 3;
  c.state_dim = 2;
  c.hidden_size = 4;
  c.num_layers = layers;
  c.dropout_rate = dropout;
  c.history_length = 5;
  return c;
}

WindowSample window(const RowMatrix& rows) { return WindowSample{rows, rows.rows() - 1}; }

}  // namespace

TEST(Init, ShapesBoundsAndForgetBias) {
  const ModelConfig c = small_config(3);
  const ModelParams p = init_params(c, 1);
  EXPECT_NO_THROW(check_shapes(p, c));
  const double bound = 0.5;
  for (const auto& L : p.layers) {
    EXPECT_LE(L.w_input.cwiseAbs().maxCoeff(), bound);
    EXPECT_LE(L.w_recurrent.cwiseAbs().maxCoeff(), bound);
    EXPECT_TRUE((L.bias.segment(4, 4).array() == 1.0).all());
  }
  EXPECT_EQ(parameter_count(p), 4 * 4 * (3 + 4 + 1) + 2 * 4 * 4 * (4 + 4 + 1) + 2 * 4 + 2);
}

TEST(Init, SeededAndReproducible) {
  const ModelConfig c = small_config();
  const auto a = init_params(c, 7), b = init_params(c, 7), d = init_params(c, 8);
  EXPECT_EQ(a.layers[1].w_recurrent, b.layers[1].w_recurrent);
  EXPECT_NE(a.layers[1].w_recurrent, d.layers[1].w_recurrent);
}

TEST(Config, Validation) {
  ModelConfig c = small_config();
  c.dropout_rate = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.output_length = 2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.hidden_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Forward, MatchesScalarReference) {
  std::mt19937_64 rng(21);
  for (Index layers : {1, 2, 3}) {
    const ModelConfig c = small_config(layers, 0.3);
    const ModelParams p = init_params(c, static_cast<std::uint64_t>(layers));
    const RowMatrix rows = random_rows(c.history_length, c.input_dim, rng);
    const Vector y = forward(p, c, window(rows), Mode::eval, 0).first;
    const auto ref = oracle::scalar_forward(to_scalar(p), to_rows(rows));
    ASSERT_EQ(static_cast<std::size_t>(y.size()), ref.size());
    for (Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[static_cast<std::size_t>(i)], 1e-13);
  }
}

TEST(Forward, BatchEqualsIndividualWindows) {
  std::mt19937_64 rng(22);
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 3);
  std::vector<WindowSample> ws;
  for (int b = 0; b < 6; ++b) ws.push_back(window(random_rows(c.history_length, c.input_dim, rng)));
  const auto cache = forward_batch(p, c, ws, Mode::eval, 0);
  for (std::size_t b = 0; b < ws.size(); ++b) {
    const Vector one = forward(p, c, ws[b], Mode::eval, 0).first;
    EXPECT_LT((cache.predictions.col(static_cast<Index>(b)) - one).cwiseAbs().maxCoeff(), 1e-14);
  }
  EXPECT_LT((predictions_from_cache(p, cache) - cache.predictions).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Forward, DropoutOnlyInTrainModeAndSeeded) {
  std::mt19937_64 rng(23);
  const ModelConfig c = small_config(2, 0.5);
  const ModelParams p = init_params(c, 4);
  const auto w = window(random_rows(c.history_length, c.input_dim, rng));
  const Vector e1 = forward(p, c, w, Mode::eval, 1).first;
  const Vector e2 = forward(p, c, w, Mode::eval, 2).first;
  EXPECT_EQ(e1, e2);
  const Vector t1 = forward(p, c, w, Mode::train, 1).first;
  const Vector t1b = forward(p, c, w, Mode::train, 1).first;
  const Vector t2 = forward(p, c, w, Mode::train, 2).first;
  EXPECT_EQ(t1, t1b);
  EXPECT_NE(t1, t2);
  EXPECT_NE(t1, e1);

  const ModelConfig nd = small_config(2, 0.0);
  EXPECT_EQ(forward(p, nd, w, Mode::train, 9).first, forward(p, nd, w, Mode::eval, 0).first);
}

TEST(Forward, RejectsBadWindows) {
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 1);
  EXPECT_THROW(forward(p, c, window(RowMatrix::Zero(5, 4)), Mode::eval, 0), ShapeError);
  RowMatrix bad = RowMatrix::Zero(5, 3);
  bad(2, 1) = std::nan("");
  EXPECT_THROW(forward(p, c, window(bad), Mode::eval, 0), ShapeError);
  ModelParams wrong = p;
  wrong.head_b.resize(3);
  EXPECT_THROW(forward(wrong, c, window(RowMatrix::Zero(5, 3)), Mode::eval, 0), ShapeError);
}

// Gradients of L = <W, predictions> for a fixed random W.
TEST(Backward, ParametersAndInputsMatchFiniteDifferences) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 6; ++trial) {
    const ModelConfig c = small_config(1 + trial % 3, trial % 2 ? 0.4 : 0.0);
    ModelParams p = init_params(c, static_cast<std::uint64_t>(trial));
    std::vector<WindowSample> ws{window(random_rows(c.history_length, c.input_dim, rng)),
                                 window(random_rows(c.history_length, c.input_dim, rng))};
    const Matrix W = testing_support::random_matrix(c.state_dim, 2, rng);
    const std::uint64_t seed = 100 + static_cast<std::uint64_t>(trial);
    auto loss = [&] { return (forward_batch(p, c, ws, Mode::train, seed).predictions.array() * W.array()).sum(); };
    const auto br = backward(p, c, forward_batch(p, c, ws, Mode::train, seed), W);

    ModelParams grads = br.grads;
    for_each_block(
        [&](const std::string& name, auto pv, auto gv) {
          for (Index i = 0; i < pv.size(); ++i) {
            const double num = oracle::central_diff(&pv[i], loss);
            ASSERT_TRUE(oracle::grad_close(gv[i], num)) << oracle::grad_mismatch(name, gv[i], num);
          }
        },
        p, grads);
    for (std::size_t b = 0; b < ws.size(); ++b)
      for (Index i = 0; i < ws[b].rows.size(); ++i) {
        const double num = oracle::central_diff(&ws[b].rows.data()[i], loss);
        const double an = br.input_grads[b].data()[i];
        ASSERT_TRUE(oracle::grad_close(an, num)) << oracle::grad_mismatch("input", an, num);
      }
  }
}

TEST(Backward, SingleStepWindow) {
  std::mt19937_64 rng(32);
  ModelConfig c = small_config();
  c.history_length = 1;
  ModelParams p = init_params(c, 5);
  const auto w = window(random_rows(1, c.input_dim, rng));
  const Matrix W = Matrix::Ones(c.state_dim, 1);
  const auto br = backward(p, c, forward(p, c, w, Mode::eval, 0).second, W);
  EXPECT_TRUE((br.grads.layers[0].w_recurrent.array() == 0.0).all());
  auto loss = [&] { return forward(p, c, w, Mode::eval, 0).first.sum(); };
  const double num = oracle::central_diff(&p.layers[0].bias[0], loss);
  EXPECT_TRUE(oracle::grad_close(br.grads.layers[0].bias[0], num));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  const ModelConfig c = small_config(1);
  ModelParams p = zeros_like(init_params(c, 1));
  ModelParams g = p;
  for_each_block([](const std::string&, auto v) { v.setLinSpaced(-3.0, 2.5); }, g);
  auto opt = make_optimizer(p, 0.1);
  const auto [q, o] = adam_step(p, g, opt);
  EXPECT_EQ(o.step, 1);
  for_each_block(
      [](const std::string&, auto qv, auto gv) {
        for (Index i = 0; i < qv.size(); ++i) {
          if (gv[i] == 0.0) continue;
          EXPECT_NEAR(qv[i], gv[i] > 0 ? -0.1 : 0.1, 1e-6);
        }
      },
      q, g);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  const ModelConfig c = small_config(1);
  ModelParams p = init_params(c, 2);
  auto opt = make_optimizer(p, 0.01, 0.8, 0.95, 1e-6);
  const double x0 = p.head_b[0];
  double x = x0, m = 0, v = 0;
  for (int t = 1; t <= 4; ++t) {
    ModelParams g = zeros_like(p);
    const double grad = 0.5 * t - 1.2;
    g.head_b[0] = grad;
    std::tie(p, opt) = adam_step(std::move(p), g, std::move(opt));
    m = 0.8 * m + 0.2 * grad;
    v = 0.95 * v + 0.05 * grad * grad;
    x -= 0.01 * (m / (1 - std::pow(0.8, t))) / (std::sqrt(v / (1 - std::pow(0.95, t))) + 1e-6);
    EXPECT_NEAR(p.head_b[0], x, 1e-15);
  }
}

TEST(Adam, RejectsNonFiniteGradientNamingBlock) {
  const ModelConfig c = small_config();
  const ModelParams p = init_params(c, 3);
  ModelParams g = zeros_like(p);
  g.layers[1].w_recurrent(2, 1) = std::numeric_limits<double>::infinity();
  try {
    (void)adam_step(p, g, make_optimizer(p));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layers[1].w_recurrent"), std::string::npos);
  }
}

TEST(Clip, GlobalNorm) {
  const ModelConfig c = small_config(1);
  ModelParams g = zeros_like(init_params(c, 1));
  g.head_b << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), global_norm(g));
}
