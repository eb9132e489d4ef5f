#pragma once

// Loop-level LSTM reference over plain vectors, written from the cell equations.

#include <cmath>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, Mat[r][c]

struct ScalarLayer {
  Mat w_input;      // 4H x in, gate order i, f, g, o
  Mat w_recurrent;  // 4H x H
  Vec bias;
};

struct ScalarModel {
  std::vector<ScalarLayer> layers;
  Mat head_w;
  Vec head_b;
};

inline double sigm(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Eval-mode forward over a window given as rows[t][feature].
inline Vec scalar_forward(const ScalarModel& m, const Mat& rows) {
  Mat seq = rows;
  for (const auto& L : m.layers) {
    const std::size_t H = L.w_recurrent.front().size();
    Vec h(H, 0.0), c(H, 0.0);
    Mat out;
    for (const auto& x : seq) {
      Vec z(4 * H);
      for (std::size_t r = 0; r < 4 * H; ++r) {
        double s = L.bias[r];
        for (std::size_t q = 0; q < x.size(); ++q) s += L.w_input[r][q] * x[q];
        for (std::size_t q = 0; q < H; ++q) s += L.w_recurrent[r][q] * h[q];
        z[r] = s;
      }
      for (std::size_t u = 0; u < H; ++u) {
        const double i = sigm(z[u]);
        const double f = sigm(z[H + u]);
        const double g = std::tanh(z[2 * H + u]);
        const double o = sigm(z[3 * H + u]);
        c[u] = f * c[u] + i * g;
        h[u] = o * std::tanh(c[u]);
      }
      out.push_back(h);
    }
    seq = std::move(out);
  }
  const Vec& top = seq.back();
  Vec y(m.head_b);
  for (std::size_t r = 0; r < y.size(); ++r)
    for (std::size_t q = 0; q < top.size(); ++q) y[r] += m.head_w[r][q] * top[q];
  return y;
}

}  // namespace oracle
