#pragma once

#include "dadsim/common.hpp"
#include "dadsim/csv.hpp"
#include "dadsim/dataset.hpp"
#include "dadsim/losses.hpp"
#include "dadsim/lstm.hpp"
#include "dadsim/simulator.hpp"

#include <array>
#include <chrono>
#include <limits>
#include <string>
#include <vector>

namespace dadsim {

enum class BucketKind { month, season };

inline BucketKind parse_bucket_kind(const std::string& s) {
  if (s == "month") return BucketKind::month;
  if (s == "season") return BucketKind::season;
  throw ConfigError("unknown bucket kind '" + s + "' (expected month or season)");
}

struct EpisodeMetrics {
  Index start_index = 0;
  int month = 1;  // calendar month (1-12) of the first predicted step
  Index horizon = 0;
  double mse = 0.0;
  double dtw = 0.0;
  bool diverged = false;
};

struct BucketStats {
  std::string bucket;
  Index count = 0;
  double mean_mse = 0.0;
  double mean_dtw = 0.0;
};

/// Per-episode metrics plus calendar aggregates. Diverged episodes carry infinite
/// metrics and are excluded from every mean.
struct MetricsReport {
  BucketKind kind = BucketKind::month;
  std::vector<EpisodeMetrics> episodes;
  std::vector<BucketStats> buckets;
  Index count = 0;
  Index diverged = 0;
  double mean_mse = 0.0;
  double mean_dtw = 0.0;
};

inline constexpr std::array<const char*, 12> kMonthNames{"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                         "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
inline constexpr std::array<const char*, 4> kSeasonNames{"Winter", "Spring", "Summer", "Autumn"};

inline int season_of(int month) { return (month % 12) / 3; }

inline int month_of_row(const TimeSeriesDataset& ds, Index row) {
  using namespace std::chrono;
  const auto when = ds.origin + minutes(row * ds.step_minutes);
  const year_month_day ymd{floor<days>(when)};
  return static_cast<int>(static_cast<unsigned>(ymd.month()));
}

inline std::string bucket_label(BucketKind kind, int month) {
  return kind == BucketKind::month ? kMonthNames[static_cast<std::size_t>(month - 1)]
                                   : kSeasonNames[static_cast<std::size_t>(season_of(month))];
}

/// Recomputes overall and bucket means from the per-episode entries.
inline MetricsReport build_report(std::vector<EpisodeMetrics> episodes, BucketKind kind) {
  MetricsReport rep;
  rep.kind = kind;
  rep.episodes = std::move(episodes);
  const int nb = kind == BucketKind::month ? 12 : 4;
  std::vector<BucketStats> acc(static_cast<std::size_t>(nb));
  double sm = 0.0, sd = 0.0;
  for (const auto& e : rep.episodes) {
    if (e.diverged) {
      ++rep.diverged;
      continue;
    }
    const int b = kind == BucketKind::month ? e.month - 1 : season_of(e.month);
    auto& a = acc[static_cast<std::size_t>(b)];
    a.count += 1;
    a.mean_mse += e.mse;
    a.mean_dtw += e.dtw;
    sm += e.mse;
    sd += e.dtw;
    ++rep.count;
  }
  if (rep.count > 0) {
    rep.mean_mse = sm / static_cast<double>(rep.count);
    rep.mean_dtw = sd / static_cast<double>(rep.count);
  } else {
    rep.mean_mse = rep.mean_dtw = std::numeric_limits<double>::quiet_NaN();
  }
  for (int b = 0; b < nb; ++b) {
    auto a = acc[static_cast<std::size_t>(b)];
    if (a.count == 0) continue;
    a.bucket = kind == BucketKind::month ? kMonthNames[static_cast<std::size_t>(b)] : kSeasonNames[static_cast<std::size_t>(b)];
    a.mean_mse /= static_cast<double>(a.count);
    a.mean_dtw /= static_cast<double>(a.count);
    rep.buckets.push_back(std::move(a));
  }
  return rep;
}

/// MSE and classical DTW of one closed-loop rollout against its targets.
template <Predictor P>
EpisodeMetrics evaluate_episode(const P& model, const TimeSeriesDataset& ds, const EpisodePair& ep) {
  EpisodeMetrics m;
  m.start_index = ep.start_index;
  m.horizon = ep.horizon();
  m.month = month_of_row(ds, ep.start_index + 1);
  try {
    const auto traj = rollout_from(model, ep.input, ds.state_dim, ep.controls);
    m.mse = mse_multi(traj.states, ep.targets);
    m.dtw = dtw_value(cost_matrix(traj.states, ep.targets));
  } catch (const DivergenceError&) {
    m.diverged = true;
    m.mse = m.dtw = std::numeric_limits<double>::infinity();
  }
  return m;
}

template <Predictor P>
MetricsReport evaluate(const P& model, const TimeSeriesDataset& ds, const std::vector<EpisodePair>& episodes,
                       BucketKind kind = BucketKind::month) {
  std::vector<EpisodeMetrics> out;
  out.reserve(episodes.size());
  for (const auto& ep : episodes) out.push_back(evaluate_episode(model, ds, ep));
  return build_report(std::move(out), kind);
}

/// Evaluates a trained LSTM; `scaled` must use the checkpoint's scaler.
inline MetricsReport evaluate(const ModelParams& params, const ModelConfig& cfg, const TimeSeriesDataset& scaled,
                              const std::vector<EpisodePair>& episodes, BucketKind kind = BucketKind::month) {
  return evaluate(LstmPredictor{&params, &cfg}, scaled, episodes, kind);
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  std::string bucket;  // "overall" for the all-episode row
  Index count = 0;
  double mse_a = 0.0, mse_b = 0.0;
  double dtw_a = 0.0, dtw_b = 0.0;
  double delta_mse = 0.0, delta_dtw = 0.0;  // a - b
  double pct_mse = 0.0, pct_dtw = 0.0;      // 100 * (a - b) / a
};

struct ComparisonSummary {
  std::vector<ComparisonRow> rows;  // buckets in calendar order, then "overall"
  const ComparisonRow& overall() const { return rows.back(); }
};

inline double percent_improvement(double a, double b) {
  if (a == b) return 0.0;
  return 100.0 * (a - b) / a;
}

inline ComparisonSummary compare(const MetricsReport& a, const MetricsReport& b) {
  if (a.episodes.size() != b.episodes.size()) throw ConfigError("reports cover different episode counts");
  for (std::size_t i = 0; i < a.episodes.size(); ++i)
    if (a.episodes[i].start_index != b.episodes[i].start_index || a.episodes[i].horizon != b.episodes[i].horizon)
      throw ConfigError("reports differ at episode " + std::to_string(i) + " (start " +
                        std::to_string(a.episodes[i].start_index) + " vs " + std::to_string(b.episodes[i].start_index) + ")");
  if (a.kind != b.kind) throw ConfigError("reports use different bucket kinds");
  // Episodes diverged in either report are dropped from both sides so every row compares like with like.
  std::vector<EpisodeMetrics> ea, eb;
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    if (a.episodes[i].diverged || b.episodes[i].diverged) continue;
    ea.push_back(a.episodes[i]);
    eb.push_back(b.episodes[i]);
  }
  const auto ra = build_report(std::move(ea), a.kind);
  const auto rb = build_report(std::move(eb), a.kind);
  auto make = [](const std::string& name, Index count, double ma, double mb, double da, double db) {
    ComparisonRow r{name, count, ma, mb, da, db, ma - mb, da - db, percent_improvement(ma, mb),
                    percent_improvement(da, db)};
    return r;
  };
  ComparisonSummary s;
  for (std::size_t i = 0; i < ra.buckets.size(); ++i) {
    const auto& x = ra.buckets[i];
    const auto& y = rb.buckets[i];
    s.rows.push_back(make(x.bucket, x.count, x.mean_mse, y.mean_mse, x.mean_dtw, y.mean_dtw));
  }
  s.rows.push_back(make("overall", ra.count, ra.mean_mse, rb.mean_mse, ra.mean_dtw, rb.mean_dtw));
  return s;
}

// ---------------------------------------------------------------------------
// CSV reports

inline void write_episode_csv(const MetricsReport& r, const std::string& path) {
  auto out = csv::open_out(path);
  out << "start_index,month,horizon,mse,dtw,diverged\n";
  for (const auto& e : r.episodes)
    out << e.start_index << ',' << e.month << ',' << e.horizon << ',' << csv::format_double(e.mse) << ','
        << csv::format_double(e.dtw) << ',' << (e.diverged ? 1 : 0) << '\n';
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline void write_bucket_csv(const MetricsReport& r, const std::string& path) {
  auto out = csv::open_out(path);
  out << "bucket,count,mean_mse,mean_dtw\n";
  for (const auto& b : r.buckets)
    out << b.bucket << ',' << b.count << ',' << csv::format_double(b.mean_mse) << ',' << csv::format_double(b.mean_dtw)
        << '\n';
  out << "overall," << r.count << ',' << csv::format_double(r.mean_mse) << ',' << csv::format_double(r.mean_dtw)
      << '\n';
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline MetricsReport read_episode_csv(const std::string& path, BucketKind kind) {
  const auto lines = csv::read_lines(path);
  if (lines.empty() || lines[0] != "start_index,month,horizon,mse,dtw,diverged")
    throw FormatError(path + ": missing or unexpected header");
  std::vector<EpisodeMetrics> eps;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c = csv::split(lines[i]);
    const std::string where = path + ": row " + std::to_string(i);
    if (c.size() != 6) throw FormatError(where + ": expected 6 columns");
    EpisodeMetrics e;
    auto si = csv::parse_int(c[0]);
    auto mo = csv::parse_int(c[1]);
    auto ho = csv::parse_int(c[2]);
    auto ms = csv::parse_double(c[3]);
    auto dt = csv::parse_double(c[4]);
    auto dv = csv::parse_int(c[5]);
    if (!si || !mo || !ho || !ms || !dt || !dv || *mo < 1 || *mo > 12)
      throw FormatError(where + ": malformed value");
    e.start_index = *si;
    e.month = static_cast<int>(*mo);
    e.horizon = *ho;
    e.mse = *ms;
    e.dtw = *dt;
    e.diverged = *dv != 0;
    eps.push_back(e);
  }
  return build_report(std::move(eps), kind);
}

/// Bucket-by-model pivot for heatmap plotting.
inline void write_comparison_csv(const ComparisonSummary& s, const std::string& label_a, const std::string& label_b,
                                 const std::string& path) {
  auto out = csv::open_out(path);
  out << "bucket,count,mse_" << label_a << ",mse_" << label_b << ",dtw_" << label_a << ",dtw_" << label_b
      << ",delta_mse,delta_dtw,pct_mse,pct_dtw\n";
  for (const auto& r : s.rows)
    out << r.bucket << ',' << r.count << ',' << csv::format_double(r.mse_a) << ',' << csv::format_double(r.mse_b) << ','
        << csv::format_double(r.dtw_a) << ',' << csv::format_double(r.dtw_b) << ',' << csv::format_double(r.delta_mse)
        << ',' << csv::format_double(r.delta_dtw) << ',' << csv::format_double(r.pct_mse) << ','
        << csv::format_double(r.pct_dtw) << '\n';
  if (!out) throw FormatError("failed writing '" + path + "'");
}

}  // namespace dadsim
