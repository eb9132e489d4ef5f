#pragma once

#include "dadsim/dataset.hpp"
#include "dadsim/lstm.hpp"
#include "oracles/scalar_lstm.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace testing_support {

using namespace dadsim;

inline oracle::Mat to_rows(const Matrix& m) {
  oracle::Mat out(static_cast<std::size_t>(m.rows()), oracle::Vec(static_cast<std::size_t>(m.cols())));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

inline oracle::Mat to_rows(const RowMatrix& m) { return to_rows(Matrix(m)); }

inline oracle::Vec to_vec(const Vector& v) { return oracle::Vec(v.data(), v.data() + v.size()); }

inline oracle::ScalarModel to_scalar(const ModelParams& p) {
  oracle::ScalarModel m;
  for (const auto& L : p.layers) m.layers.push_back({to_rows(L.w_input), to_rows(L.w_recurrent), to_vec(L.bias)});
  m.head_w = to_rows(p.head_w);
  m.head_b = to_vec(p.head_b);
  return m;
}

inline RowMatrix random_rows(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  RowMatrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  return Matrix(random_rows(rows, cols, rng, lo, hi));
}

/// Dataset with the given values and default names.
inline TimeSeriesDataset make_dataset(const RowMatrix& values, Index state_dim) {
  TimeSeriesDataset ds;
  ds.values = values;
  ds.state_dim = state_dim;
  ds.control_dim = values.cols() - state_dim;
  ds.names = default_names(state_dim, ds.control_dim);
  return ds;
}

/// Fresh scratch directory under the system temp path, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("dadsim_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace testing_support
