#pragma once

// Brute-force reference for alignment losses: walks every monotone warping path.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;
using Path = std::vector<std::pair<int, int>>;

inline void enumerate_paths(int k, const std::function<void(const Path&)>& visit) {
  Path p{{0, 0}};
  std::function<void(int, int)> rec = [&](int i, int j) {
    if (i == k - 1 && j == k - 1) {
      visit(p);
      return;
    }
    const int moves[3][2] = {{1, 1}, {1, 0}, {0, 1}};
    for (const auto& m : moves) {
      const int a = i + m[0], b = j + m[1];
      if (a >= k || b >= k) continue;
      p.emplace_back(a, b);
      rec(a, b);
      p.pop_back();
    }
  };
  rec(0, 0);
}

inline double inner(const Path& p, const Grid& m) {
  double s = 0.0;
  for (auto [i, j] : p) s += m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return s;
}

struct Enumerated {
  double soft = 0.0;      // -gamma log sum exp(-<A,Delta>/gamma)
  double temporal = 0.0;  // Gibbs expectation of <A,Omega>
  double hard = 0.0;      // min <A,Delta>
  double hard_tdi = 0.0;  // <A*,Omega> of the minimizing path
  long paths = 0;
};

inline Enumerated enumerate(const Grid& delta, const Grid& omega, double gamma) {
  const int k = static_cast<int>(delta.size());
  std::vector<double> costs, temps;
  Enumerated e;
  e.hard = std::numeric_limits<double>::infinity();
  enumerate_paths(k, [&](const Path& p) {
    const double c = inner(p, delta);
    const double t = inner(p, omega);
    costs.push_back(c);
    temps.push_back(t);
    if (c < e.hard) {
      e.hard = c;
      e.hard_tdi = t;
    }
  });
  e.paths = static_cast<long>(costs.size());
  const double m = *std::min_element(costs.begin(), costs.end());
  double z = 0.0, zt = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const double w = std::exp(-(costs[i] - m) / gamma);
    z += w;
    zt += w * temps[i];
  }
  e.soft = m - gamma * std::log(z);
  e.temporal = zt / z;
  return e;
}

}  // namespace oracle
