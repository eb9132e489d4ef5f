#pragma once

#include "dadsim/common.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace dadsim {

enum class LossKind { mse, dilate };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "dilate"; }

inline LossKind parse_loss_kind(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "mse") return LossKind::mse;
  if (s == "dilate") return LossKind::dilate;
  throw ConfigError("unknown loss '" + s + "' (expected mse or dilate)");
}

/// Trajectory loss selection. DILATE = alpha * soft-DTW + (1 - alpha) * temporal term.
struct LossConfig {
  LossKind kind = LossKind::mse;
  double alpha = 0.5;
  double gamma = 1e-2;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in [0, 1]");
    if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
  }
};

/// Below this smoothing the soft-min weights underflow for realistic costs.
inline constexpr double kMinGradientGamma = 1e-4;

namespace detail {
inline void require_same_shape(const RowMatrix& a, const RowMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(what) + ": shape " + shape_str(a.rows(), a.cols()) + " vs " +
                     shape_str(b.rows(), b.cols()));
}
inline void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0)
    throw ShapeError(std::string(what) + ": cost matrix must be square and non-empty, got " +
                     shape_str(m.rows(), m.cols()));
}
inline void require_gamma(double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be > 0");
}
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace detail

// ---------------------------------------------------------------------------
// Pointwise losses

inline double mse_single(const Vector& yhat, const Vector& y) {
  if (yhat.size() != y.size() || y.size() == 0)
    throw ShapeError("mse_single: dimension " + std::to_string(yhat.size()) + " vs " + std::to_string(y.size()));
  return (yhat - y).squaredNorm() / static_cast<double>(y.size());
}

inline double mse_multi(const RowMatrix& yhat, const RowMatrix& y) {
  detail::require_same_shape(yhat, y, "mse_multi");
  if (y.size() == 0) throw ShapeError("mse_multi: empty trajectories");
  return (yhat - y).squaredNorm() / static_cast<double>(y.size());
}

/// Squared Euclidean distance between every predicted row h and true row j.
inline Matrix cost_matrix(const RowMatrix& yhat, const RowMatrix& y) {
  detail::require_same_shape(yhat, y, "cost_matrix");
  const Index k = y.rows();
  Matrix d(k, k);
  for (Index h = 0; h < k; ++h)
    for (Index j = 0; j < k; ++j) d(h, j) = (yhat.row(h) - y.row(j)).squaredNorm();
  return d;
}

/// Omega(h, j) = (h - j)^2 / k^2.
inline Matrix omega_matrix(Index k) {
  Matrix om(k, k);
  const double k2 = static_cast<double>(k) * static_cast<double>(k);
  for (Index h = 0; h < k; ++h)
    for (Index j = 0; j < k; ++j) om(h, j) = static_cast<double>((h - j) * (h - j)) / k2;
  return om;
}

// ---------------------------------------------------------------------------
// Classical DTW

/// Monotone, contiguous alignment from (0,0) to (k-1,k-1), stored as visited cells.
struct WarpingPath {
  Index k = 0;
  std::vector<std::pair<Index, Index>> cells;

  Matrix as_matrix() const {
    Matrix a = Matrix::Zero(k, k);
    for (auto [h, j] : cells) a(h, j) = 1.0;
    return a;
  }
};

struct DtwResult {
  double value = 0.0;
  WarpingPath path;
};

namespace detail {
inline Matrix dtw_table(const Matrix& delta) {
  const Index k = delta.rows();
  Matrix D = Matrix::Constant(k + 1, k + 1, kInf);
  D(0, 0) = 0.0;
  for (Index i = 1; i <= k; ++i)
    for (Index j = 1; j <= k; ++j)
      D(i, j) = delta(i - 1, j - 1) + std::min({D(i - 1, j - 1), D(i - 1, j), D(i, j - 1)});
  return D;
}
}  // namespace detail

/// Minimum-cost warping path. Ties prefer the diagonal predecessor, then the one that
/// advances the prediction index, then the one that advances the target index.
inline DtwResult dtw_classic(const Matrix& delta) {
  detail::require_square(delta, "dtw_classic");
  if (!delta.allFinite()) throw ShapeError("dtw_classic: cost matrix contains non-finite entries");
  const Index k = delta.rows();
  const Matrix D = detail::dtw_table(delta);
  DtwResult r;
  r.value = D(k, k);
  r.path.k = k;
  Index i = k, j = k;
  r.path.cells.emplace_back(i - 1, j - 1);
  while (i > 1 || j > 1) {
    const double diag = D(i - 1, j - 1);
    const double down = D(i - 1, j);
    const double right = D(i, j - 1);
    if (diag <= down && diag <= right) {
      --i;
      --j;
    } else if (down <= right) {
      --i;
    } else {
      --j;
    }
    r.path.cells.emplace_back(i - 1, j - 1);
  }
  std::reverse(r.path.cells.begin(), r.path.cells.end());
  return r;
}

inline double dtw_value(const Matrix& delta) {
  detail::require_square(delta, "dtw_value");
  return detail::dtw_table(delta)(delta.rows(), delta.rows());
}

/// <A*, Omega> for the classical optimal path A*.
inline double tdi_hard(const Matrix& delta, const Matrix& omega) {
  if (omega.rows() != delta.rows() || omega.cols() != delta.cols())
    throw ShapeError("tdi_hard: omega shape does not match cost matrix");
  const auto r = dtw_classic(delta);
  double s = 0.0;
  for (auto [h, j] : r.path.cells) s += omega(h, j);
  return s;
}

// ---------------------------------------------------------------------------
// Soft-DTW and the smoothed temporal term

/// Forward tables of the soft-min recursion over the (k+1)x(k+1) grid.
/// r holds the soft-DTW value of every prefix; rdot holds its derivative along omega,
/// which equals the expected <A, Omega> under the Gibbs distribution over prefix paths.
struct SoftDtwTables {
  Index k = 0;
  double gamma = 1.0;
  Matrix r;
  Matrix rdot;
  // Soft-min weights of the three predecessors of cell (i, j), indexed by (i-1, j-1).
  Matrix w_diag, w_down, w_right;
};

inline SoftDtwTables soft_dtw_tables(const Matrix& delta, double gamma, const Matrix* omega = nullptr) {
  using detail::kInf;
  detail::require_square(delta, "soft_dtw");
  detail::require_gamma(gamma);
  if (!delta.allFinite()) throw ShapeError("soft_dtw: cost matrix contains non-finite entries");
  if (omega && (omega->rows() != delta.rows() || omega->cols() != delta.cols()))
    throw ShapeError("soft_dtw: omega shape does not match cost matrix");
  const Index k = delta.rows();
  SoftDtwTables t;
  t.k = k;
  t.gamma = gamma;
  t.r = Matrix::Constant(k + 1, k + 1, kInf);
  t.r(0, 0) = 0.0;
  t.rdot = Matrix::Zero(k + 1, k + 1);
  t.w_diag.resize(k, k);
  t.w_down.resize(k, k);
  t.w_right.resize(k, k);
  for (Index i = 1; i <= k; ++i) {
    for (Index j = 1; j <= k; ++j) {
      const double a = t.r(i - 1, j - 1), b = t.r(i - 1, j), c = t.r(i, j - 1);
      const double m = std::min({a, b, c});
      const double ea = a == kInf ? 0.0 : std::exp(-(a - m) / gamma);
      const double eb = b == kInf ? 0.0 : std::exp(-(b - m) / gamma);
      const double ec = c == kInf ? 0.0 : std::exp(-(c - m) / gamma);
      const double s = ea + eb + ec;
      t.r(i, j) = delta(i - 1, j - 1) + m - gamma * std::log(s);
      t.w_diag(i - 1, j - 1) = ea / s;
      t.w_down(i - 1, j - 1) = eb / s;
      t.w_right(i - 1, j - 1) = ec / s;
      if (omega)
        t.rdot(i, j) = (*omega)(i - 1, j - 1) + (ea * t.rdot(i - 1, j - 1) + eb * t.rdot(i - 1, j) +
                                                 ec * t.rdot(i, j - 1)) / s;
    }
  }
  if (!std::isfinite(t.r(k, k)) || !std::isfinite(t.rdot(k, k)))
    throw NumericError("soft_dtw overflowed; increase gamma or rescale the data");
  return t;
}

/// -gamma * log sum_A exp(-<A, Delta> / gamma) over all warping paths.
inline double soft_dtw(const Matrix& delta, double gamma) {
  const auto t = soft_dtw_tables(delta, gamma);
  return t.r(t.k, t.k);
}

/// (1/Z) sum_A <A, Omega> exp(-<A, Delta> / gamma).
inline double temporal_loss(const Matrix& delta, const Matrix& omega, double gamma) {
  const auto t = soft_dtw_tables(delta, gamma, &omega);
  return t.rdot(t.k, t.k);
}

/// Gradient with respect to Delta of shape_weight * soft_dtw + temporal_weight * temporal_loss,
/// by reverse-mode differentiation through both recursions of the tables.
inline Matrix soft_dtw_tables_grad(const SoftDtwTables& t, double shape_weight, double temporal_weight) {
  const Index k = t.k;
  const double inv_gamma = 1.0 / t.gamma;
  Matrix rbar = Matrix::Zero(k + 2, k + 2);
  Matrix rdbar = Matrix::Zero(k + 2, k + 2);
  rbar(k, k) = shape_weight;
  rdbar(k, k) = temporal_weight;
  Matrix grad(k, k);
  const bool temporal = temporal_weight != 0.0;
  for (Index i = k; i >= 1; --i) {
    for (Index j = k; j >= 1; --j) {
      const double rb = rbar(i, j);
      const double wa = t.w_diag(i - 1, j - 1), wb = t.w_down(i - 1, j - 1), wc = t.w_right(i - 1, j - 1);
      grad(i - 1, j - 1) = rb;
      rbar(i - 1, j - 1) += rb * wa;
      rbar(i - 1, j) += rb * wb;
      rbar(i, j - 1) += rb * wc;
      if (temporal) {
        const double rdb = rdbar(i, j);
        const double da = t.rdot(i - 1, j - 1), db = t.rdot(i - 1, j), dc = t.rdot(i, j - 1);
        const double mean = wa * da + wb * db + wc * dc;
        rdbar(i - 1, j - 1) += rdb * wa;
        rdbar(i - 1, j) += rdb * wb;
        rdbar(i, j - 1) += rdb * wc;
        const double s = -rdb * inv_gamma;
        rbar(i - 1, j - 1) += s * wa * (da - mean);
        rbar(i - 1, j) += s * wb * (db - mean);
        rbar(i, j - 1) += s * wc * (dc - mean);
      }
    }
  }
  return grad;
}

/// Maps a gradient with respect to the squared-Euclidean cost matrix back onto yhat.
inline RowMatrix cost_grad_to_prediction(const Matrix& grad_delta, const RowMatrix& yhat, const RowMatrix& y) {
  const Vector rowsum = grad_delta.rowwise().sum();
  RowMatrix g = 2.0 * (rowsum.asDiagonal() * yhat - grad_delta * y);
  return g;
}

inline double dilate(const RowMatrix& yhat, const RowMatrix& y, const LossConfig& cfg) {
  cfg.validate();
  const Matrix delta = cost_matrix(yhat, y);
  const Matrix omega = omega_matrix(y.rows());
  const auto t = soft_dtw_tables(delta, cfg.gamma, &omega);
  return cfg.alpha * t.r(t.k, t.k) + (1.0 - cfg.alpha) * t.rdot(t.k, t.k);
}

struct LossValue {
  double value = 0.0;
  RowMatrix grad;  // k x d_s, d value / d yhat
};

/// Value and exact gradient of the configured trajectory loss.
inline LossValue loss_with_grad(const LossConfig& cfg, const RowMatrix& yhat, const RowMatrix& y) {
  cfg.validate();
  LossValue out;
  if (cfg.kind == LossKind::mse) {
    out.value = mse_multi(yhat, y);
    out.grad = 2.0 * (yhat - y) / static_cast<double>(y.size());
    return out;
  }
  if (cfg.gamma < kMinGradientGamma)
    throw ConfigError("gamma " + std::to_string(cfg.gamma) + " is too small for stable soft-DTW gradients; use gamma >= 1e-4");
  const Matrix delta = cost_matrix(yhat, y);
  const Matrix omega = omega_matrix(y.rows());
  const auto t = soft_dtw_tables(delta, cfg.gamma, cfg.alpha < 1.0 ? &omega : nullptr);
  out.value = cfg.alpha * t.r(t.k, t.k) + (1.0 - cfg.alpha) * t.rdot(t.k, t.k);
  const Matrix gd = soft_dtw_tables_grad(t, cfg.alpha, 1.0 - cfg.alpha);
  out.grad = cost_grad_to_prediction(gd, yhat, y);
  if (!out.grad.allFinite()) throw NumericError("non-finite loss gradient; increase gamma");
  return out;
}

inline RowMatrix loss_grad(const LossConfig& cfg, const RowMatrix& yhat, const RowMatrix& y) {
  return loss_with_grad(cfg, yhat, y).grad;
}

inline double loss_value(const LossConfig& cfg, const RowMatrix& yhat, const RowMatrix& y) {
  if (cfg.kind == LossKind::mse) return mse_multi(yhat, y);
  return dilate(yhat, y, cfg);
}

}  // namespace dadsim
