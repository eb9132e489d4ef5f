#pragma once

#include "dadsim/common.hpp"
#include "dadsim/csv.hpp"
#include "dadsim/rng.hpp"

#include <algorithm>
#include <chrono>
#include <numbers>
#include <string>
#include <vector>

namespace dadsim {

inline constexpr Index kMinutesPerDay = 1440;

/// Default calendar origin for generated data: 2023-01-01 00:00 UTC.
inline std::chrono::sys_seconds default_origin() {
  using namespace std::chrono;
  return sys_seconds{sys_days{year{2023} / January / 1}};
}

/// Time-indexed matrix of state columns followed by control columns.
struct TimeSeriesDataset {
  RowMatrix values;
  Index state_dim = 0;
  Index control_dim = 0;
  Index step_minutes = 1;
  std::chrono::sys_seconds origin = default_origin();
  std::vector<std::string> names;

  Index rows() const { return values.rows(); }
  Index width() const { return state_dim + control_dim; }
  Index rows_per_day() const { return kMinutesPerDay / step_minutes; }

  void validate() const {
    if (state_dim < 1 || control_dim < 1)
      throw ShapeError("dataset needs at least one state and one control column");
    if (values.cols() != width())
      throw ShapeError("dataset has " + std::to_string(values.cols()) + " columns, expected " +
                       std::to_string(width()));
    if (step_minutes < 1 || kMinutesPerDay % step_minutes != 0)
      throw ConfigError("step_minutes must divide 1440");
    if (!values.allFinite()) throw FormatError("dataset contains non-finite values");
    if (!names.empty() && static_cast<Index>(names.size()) != width())
      throw ShapeError("dataset column names do not match width");
  }
};

/// Rows [begin, end) of a dataset; the origin moves with the first row.
inline TimeSeriesDataset slice_rows(const TimeSeriesDataset& ds, Index begin, Index end) {
  if (begin < 0 || end > ds.rows() || begin >= end)
    throw ShapeError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside dataset of " + std::to_string(ds.rows()) + " rows");
  TimeSeriesDataset out = ds;
  out.values = ds.values.middleRows(begin, end - begin);
  out.origin = ds.origin + std::chrono::minutes(begin * ds.step_minutes);
  return out;
}

inline std::vector<std::string> default_names(Index state_dim, Index control_dim) {
  std::vector<std::string> names;
  for (Index j = 0; j < state_dim; ++j) names.push_back("x" + std::to_string(j + 1));
  for (Index j = 0; j < control_dim; ++j) names.push_back("u" + std::to_string(j + 1));
  return names;
}

// ---------------------------------------------------------------------------
// CSV

/// Reads `index,<states...>,<controls...>`; rows are kept in file order.
inline TimeSeriesDataset load_csv(const std::string& path, Index state_dim, Index control_dim) {
  if (state_dim < 1 || control_dim < 1) throw ConfigError("state and control dims must be positive");
  const auto lines = csv::read_lines(path);
  if (lines.empty()) throw FormatError(path + ": missing header row");
  const Index width = state_dim + control_dim;
  const auto header = csv::split(lines[0]);
  if (!header.empty() && csv::parse_double(header[0]))
    throw FormatError(path + ": first line is numeric; expected a header row");
  if (static_cast<Index>(header.size()) != width + 1)
    throw FormatError(path + ": header has " + std::to_string(header.size()) + " columns, expected " +
                      std::to_string(width + 1) + " (index + " + std::to_string(width) + ")");

  TimeSeriesDataset ds;
  ds.state_dim = state_dim;
  ds.control_dim = control_dim;
  for (Index j = 1; j <= width; ++j) ds.names.emplace_back(header[j]);

  std::vector<const std::string*> data;
  for (std::size_t i = 1; i < lines.size(); ++i)
    if (!lines[i].empty()) data.push_back(&lines[i]);
  ds.values.resize(static_cast<Index>(data.size()), width);
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto cells = csv::split(*data[r]);
    const std::string where = path + ": data row " + std::to_string(r + 1);
    if (static_cast<Index>(cells.size()) != width + 1)
      throw FormatError(where + " has " + std::to_string(cells.size()) + " columns, expected " +
                        std::to_string(width + 1));
    if (!csv::parse_int(cells[0])) throw FormatError(where + ", column 'index': not an integer");
    for (Index j = 0; j < width; ++j) {
      const auto cell = cells[j + 1];
      const std::string col = "column '" + ds.names[j] + "'";
      if (cell.empty()) throw FormatError(where + ", " + col + ": blank cell");
      auto v = csv::parse_double(cell);
      if (!v) throw FormatError(where + ", " + col + ": non-numeric value '" + std::string(cell) + "'");
      if (!std::isfinite(*v)) throw FormatError(where + ", " + col + ": non-finite value");
      ds.values(static_cast<Index>(r), j) = *v;
    }
  }
  return ds;
}

inline void write_csv(const TimeSeriesDataset& ds, const std::string& path) {
  ds.validate();
  const auto names = ds.names.empty() ? default_names(ds.state_dim, ds.control_dim) : ds.names;
  auto out = csv::open_out(path);
  out << "index";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (Index r = 0; r < ds.rows(); ++r) {
    out << r;
    for (Index j = 0; j < ds.width(); ++j) out << ',' << csv::format_double(ds.values(r, j));
    out << '\n';
  }
  if (!out) throw FormatError("failed writing '" + path + "'");
}

// ---------------------------------------------------------------------------
// Min-max scaling

struct Scaler {
  Vector mins;
  Vector maxs;

  Index width() const { return mins.size(); }

  void validate() const {
    if (mins.size() != maxs.size()) throw ShapeError("scaler mins/maxs length mismatch");
    for (Index j = 0; j < mins.size(); ++j)
      if (!(maxs[j] > mins[j]))
        throw FormatError("scaler column " + std::to_string(j) + ": max must exceed min");
  }
};

inline Scaler fit_scaler(const TimeSeriesDataset& ds) {
  if (ds.rows() == 0) throw ShapeError("cannot fit scaler on empty dataset");
  Scaler s{ds.values.colwise().minCoeff().transpose(), ds.values.colwise().maxCoeff().transpose()};
  for (Index j = 0; j < s.mins.size(); ++j)
    if (!(s.maxs[j] > s.mins[j]))
      throw ConfigError("column " + std::to_string(j) +
                        (ds.names.empty() ? std::string{} : " ('" + ds.names[j] + "')") +
                        " is constant; min-max scaling undefined");
  return s;
}

/// (v - min) / (max - min) per column; values outside the fitted range are not clamped.
inline TimeSeriesDataset apply_scaler(const TimeSeriesDataset& ds, const Scaler& s) {
  if (s.width() != ds.width()) throw ShapeError("scaler width does not match dataset");
  TimeSeriesDataset out = ds;
  for (Index j = 0; j < ds.width(); ++j)
    out.values.col(j) = (ds.values.col(j).array() - s.mins[j]) / (s.maxs[j] - s.mins[j]);
  return out;
}

inline TimeSeriesDataset invert_scaler(const TimeSeriesDataset& ds, const Scaler& s) {
  if (s.width() != ds.width()) throw ShapeError("scaler width does not match dataset");
  TimeSeriesDataset out = ds;
  for (Index j = 0; j < ds.width(); ++j)
    out.values.col(j) = ds.values.col(j).array() * (s.maxs[j] - s.mins[j]) + s.mins[j];
  return out;
}

/// Inverts a block whose columns are the scaler columns [first_col, first_col + cols).
inline RowMatrix invert_columns(const RowMatrix& scaled, const Scaler& s, Index first_col) {
  if (first_col + scaled.cols() > s.width()) throw ShapeError("column block outside scaler");
  RowMatrix out(scaled.rows(), scaled.cols());
  for (Index j = 0; j < scaled.cols(); ++j) {
    const Index c = first_col + j;
    out.col(j) = scaled.col(j).array() * (s.maxs[c] - s.mins[c]) + s.mins[c];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windows and episodes

/// l consecutive rows ending at anchor_index, oldest first.
struct WindowSample {
  RowMatrix rows;
  Index anchor_index = 0;

  Index length() const { return rows.rows(); }
};

inline WindowSample make_window(const TimeSeriesDataset& ds, Index t, Index l) {
  if (l < 1) throw ConfigError("history length must be >= 1");
  if (t < l - 1 || t >= ds.rows())
    throw ShapeError("window end " + std::to_string(t) + " invalid for history " + std::to_string(l) +
                     " and " + std::to_string(ds.rows()) + " rows");
  return WindowSample{ds.values.middleRows(t - l + 1, l), t};
}

struct EpisodePair {
  WindowSample input;
  RowMatrix targets;   // T x d_s, row j is the state at start_index + 1 + j
  RowMatrix controls;  // T x a_s, aligned with targets
  Index start_index = 0;

  Index horizon() const { return targets.rows(); }
};

inline EpisodePair make_episode(const TimeSeriesDataset& ds, Index l, Index start, Index length) {
  if (length < 1) throw ConfigError("episode length must be >= 1");
  if (start + length > ds.rows() - 1)
    throw ShapeError("episode at " + std::to_string(start) + " of length " + std::to_string(length) +
                     " runs past the dataset end");
  EpisodePair ep;
  ep.input = make_window(ds, start, l);
  ep.targets = ds.values.block(start + 1, 0, length, ds.state_dim);
  ep.controls = ds.values.block(start + 1, ds.state_dim, length, ds.control_dim);
  ep.start_index = start;
  return ep;
}

enum class Regime { E1, E2, E3, E4 };

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::E1: return "E1";
    case Regime::E2: return "E2";
    case Regime::E3: return "E3";
    case Regime::E4: return "E4";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "E1") return Regime::E1;
  if (s == "E2") return Regime::E2;
  if (s == "E3") return Regime::E3;
  if (s == "E4") return Regime::E4;
  throw ConfigError("unknown experiment '" + s + "' (expected E1, E2, E3 or E4)");
}

/// E1 constant/consecutive, E2 random length/consecutive, E3 random start/constant length,
/// E4 random start and length.
struct RegimeConfig {
  Regime regime = Regime::E1;
  Index min_el = 1440;
  Index max_el = 1440;
  std::uint64_t seed = 0;
  /// Episode count for the random-start regimes; 0 means one pass worth of expected coverage.
  Index episodes = 0;

  bool constant_length() const { return regime == Regime::E1 || regime == Regime::E3; }

  void validate() const {
    if (min_el < 1) throw ConfigError("min_el must be >= 1");
    if (min_el > max_el) throw ConfigError("min_el must not exceed max_el");
    if (constant_length() && min_el != max_el)
      throw ConfigError(to_string(regime) + " uses constant-length episodes; min_el must equal max_el");
    if (episodes < 0) throw ConfigError("episodes must be >= 0");
  }
};

/// Episodes for one pass over `ds` under the given regime. Pure in (ds, l, rc).
inline std::vector<EpisodePair> build_episodes(const TimeSeriesDataset& ds, Index l, const RegimeConfig& rc) {
  rc.validate();
  if (l < 1) throw ConfigError("history length must be >= 1");
  const Index first = l - 1;
  const Index last_row = ds.rows() - 1;
  if (first + rc.min_el > last_row)
    throw ConfigError("dataset of " + std::to_string(ds.rows()) + " rows too short for one episode of " +
                      std::to_string(rc.min_el) + " steps with history " + std::to_string(l));
  const Index avail = last_row - first;  // longest episode that fits
  Rng rng = make_rng(rc.seed);
  std::vector<EpisodePair> out;

  auto auto_count = [&](double mean_len) {
    return std::max<Index>(1, static_cast<Index>(std::floor(static_cast<double>(ds.rows() - l) / mean_len)));
  };

  switch (rc.regime) {
    case Regime::E1: {
      const Index count = (ds.rows() - l) / rc.min_el;
      for (Index i = 0; i < count; ++i) out.push_back(make_episode(ds, l, first + i * rc.min_el, rc.min_el));
      break;
    }
    case Regime::E2: {
      Index start = first;
      while (true) {
        const Index len = uniform_int(rng, rc.min_el, rc.max_el);
        if (start + len > last_row) break;
        out.push_back(make_episode(ds, l, start, len));
        start += len;
      }
      break;
    }
    case Regime::E3: {
      const Index count = rc.episodes > 0 ? rc.episodes : auto_count(static_cast<double>(rc.min_el));
      for (Index i = 0; i < count; ++i) {
        const Index start = uniform_int(rng, first, last_row - rc.min_el);
        out.push_back(make_episode(ds, l, start, rc.min_el));
      }
      break;
    }
    case Regime::E4: {
      const Index hi = std::min(rc.max_el, avail);
      const Index count =
          rc.episodes > 0 ? rc.episodes : auto_count(0.5 * static_cast<double>(rc.min_el + hi));
      for (Index i = 0; i < count; ++i) {
        const Index len = uniform_int(rng, rc.min_el, hi);
        const Index start = uniform_int(rng, first, last_row - len);
        out.push_back(make_episode(ds, l, start, len));
      }
      break;
    }
  }
  return out;
}

/// Chronological split into training, validation and test rows by whole days.
struct DataSplit {
  Index train_end = 0;       // rows [0, train_end)
  Index validation_end = 0;  // rows [train_end, validation_end)
  Index total = 0;           // rows [validation_end, total) are held out for testing
};

inline DataSplit day_split(const TimeSeriesDataset& ds, Index validation_days, Index test_days) {
  if (validation_days < 0 || test_days < 0) throw ConfigError("day counts must be >= 0");
  const Index per_day = ds.rows_per_day();
  const Index days = ds.rows() / per_day;
  if (days < validation_days + test_days + 1)
    throw ConfigError("dataset spans " + std::to_string(days) + " whole days; need at least " +
                      std::to_string(validation_days + test_days + 1));
  DataSplit s;
  s.total = ds.rows();
  s.validation_end = (days - test_days) * per_day;
  s.train_end = s.validation_end - validation_days * per_day;
  return s;
}

/// One episode per calendar day in [first_day, end_day): the window ends on the last row of
/// the previous day and the targets cover the day itself.
inline std::vector<EpisodePair> day_episodes(const TimeSeriesDataset& ds, Index l, Index first_day, Index end_day) {
  const Index per_day = ds.rows_per_day();
  std::vector<EpisodePair> out;
  for (Index d = std::max<Index>(first_day, 0); d < end_day; ++d) {
    const Index start = d * per_day - 1;
    if (start < l - 1 || start + per_day > ds.rows() - 1) continue;
    out.push_back(make_episode(ds, l, start, per_day));
  }
  return out;
}

/// Day episodes whose targets lie inside rows [begin, end).
inline std::vector<EpisodePair> day_episodes_in_rows(const TimeSeriesDataset& ds, Index l, Index begin, Index end) {
  const Index per_day = ds.rows_per_day();
  const Index first_day = (begin + per_day - 1) / per_day;
  const Index end_day = end / per_day;
  auto eps = day_episodes(ds, l, first_day, end_day);
  std::erase_if(eps, [&](const EpisodePair& e) { return e.start_index + e.horizon() >= end; });
  return eps;
}

// ---------------------------------------------------------------------------
// Synthetic dosing plant

/// Three-state dosing plant at one-minute resolution:
///   s1 phosphate-like concentration, removed by dosing through a saturating term;
///   s2 inflow with a diurnal cycle;
///   s3 auxiliary load, a first-order lag of s2.
/// One control column (dosage), piecewise constant over random hold periods.
struct SyntheticPlantConfig {
  Index days = 60;
  Index state_dim = 3;
  Index control_dim = 1;
  double dt = 1.0;
  double q0 = 1.0;
  double c_in = 0.05;
  double k_r = 0.08;
  double k_m = 0.5;
  double k_out = 0.01;
  double diurnal_amplitude = 0.4;
  double aux_time_constant = 60.0;
  double noise_std = 0.01;
  double initial_phosphate = 2.0;
  double control_min = 0.0;
  double control_max = 1.0;
  Index hold_min = 30;
  Index hold_max = 240;
  std::uint64_t seed = 0;

  /// Documented parameter ranges; the generator is bounded and finite inside them.
  void validate() const {
    auto in = [](double v, double lo, double hi, const char* name) {
      if (!(v >= lo && v <= hi))
        throw ConfigError(std::string("plant parameter '") + name + "' outside [" + csv::format_double(lo) +
                          ", " + csv::format_double(hi) + "]");
    };
    if (days < 1 || days > 3660) throw ConfigError("plant parameter 'days' outside [1, 3660]");
    if (state_dim != 3 || control_dim != 1)
      throw ConfigError("synthetic plant has exactly 3 state columns and 1 control column");
    in(dt, 1e-3, 1.0, "dt");
    in(q0, 0.1, 10.0, "q0");
    in(c_in, 0.0, 1.0, "c_in");
    in(k_r, 0.0, 1.0, "k_r");
    in(k_m, 0.01, 10.0, "k_m");
    in(k_out, 1e-3, 0.5, "k_out");
    in(diurnal_amplitude, 0.0, 0.9, "diurnal_amplitude");
    in(aux_time_constant, 1.0, 1440.0, "aux_time_constant");
    in(noise_std, 0.0, 0.1, "noise_std");
    in(initial_phosphate, 0.0, 100.0, "initial_phosphate");
    in(control_min, 0.0, 5.0, "control_min");
    in(control_max, control_min, 5.0, "control_max");
    if (hold_min < 1 || hold_max < hold_min) throw ConfigError("plant hold periods need 1 <= hold_min <= hold_max");
  }
};

struct PlantState {
  double phosphate;
  double inflow;
  double aux;
};

inline double plant_inflow(const SyntheticPlantConfig& c, Index t) {
  return c.q0 * (1.0 + c.diurnal_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                                       static_cast<double>(kMinutesPerDay)));
}

/// One plant step from time t to t + 1 under dosage u(t); noise terms enter additively.
inline PlantState plant_step(const SyntheticPlantConfig& c, const PlantState& s, double dosage, Index t,
                             double noise_phosphate = 0.0, double noise_inflow = 0.0) {
  PlantState n;
  const double removal = c.k_r * dosage * s.phosphate / (c.k_m + s.phosphate);
  n.phosphate = s.phosphate + c.dt * (s.inflow * c.c_in - removal - c.k_out * s.phosphate) + noise_phosphate;
  n.phosphate = std::max(0.0, n.phosphate);
  n.inflow = plant_inflow(c, t + 1) + noise_inflow;
  n.aux = s.aux + c.dt * (s.inflow - s.aux) / c.aux_time_constant;
  return n;
}

inline std::vector<std::string> plant_names() { return {"phosphate", "inflow", "aux_load", "dosage"}; }

inline TimeSeriesDataset gen_synthetic(const SyntheticPlantConfig& cfg) {
  cfg.validate();
  const Index rows = cfg.days * kMinutesPerDay;
  TimeSeriesDataset ds;
  ds.state_dim = 3;
  ds.control_dim = 1;
  ds.names = plant_names();
  ds.values.resize(rows, 4);

  Rng noise_rng = make_rng(derive_seed(cfg.seed, {1}));
  Rng control_rng = make_rng(derive_seed(cfg.seed, {2}));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> level(0.0, 1.0);
  auto draw_noise = [&] {
    const double z = normal(noise_rng);
    return cfg.noise_std > 0.0 ? cfg.noise_std * z : 0.0;
  };

  Index hold_left = 0;
  double dosage = cfg.control_min;
  auto next_control = [&] {
    if (hold_left == 0) {
      dosage = cfg.control_min + (cfg.control_max - cfg.control_min) * level(control_rng);
      hold_left = uniform_int(control_rng, cfg.hold_min, cfg.hold_max);
    }
    --hold_left;
    return dosage;
  };

  PlantState s{cfg.initial_phosphate, plant_inflow(cfg, 0) + draw_noise(), 0.0};
  s.aux = s.inflow;
  for (Index t = 0; t < rows; ++t) {
    const double u = next_control();
    ds.values.row(t) << s.phosphate, s.inflow, s.aux, u;
    if (!std::isfinite(s.phosphate) || !std::isfinite(s.inflow) || !std::isfinite(s.aux))
      throw ConfigError("synthetic plant produced a non-finite state at row " + std::to_string(t));
    if (t + 1 < rows) {
      const double np = draw_noise();
      const double ni = draw_noise();
      s = plant_step(cfg, s, u, t, np, ni);
    }
  }
  return ds;
}

}  // namespace dadsim
