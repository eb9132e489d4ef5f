#include "dadsim/eval.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

using namespace dadsim;
using testing_support::TempDir;

namespace {

EpisodeMetrics ep(Index start, int month, double mse, double dtw, bool diverged = false) {
  EpisodeMetrics e;
  e.start_index = start;
  e.month = month;
  e.horizon = 1440;
  e.mse = mse;
  e.dtw = dtw;
  e.diverged = diverged;
  if (diverged) e.mse = e.dtw = std::numeric_limits<double>::infinity();
  return e;
}

}  // namespace

TEST(Calendar, MonthOfRowFollowsOrigin) {
  TimeSeriesDataset ds;
  EXPECT_EQ(month_of_row(ds, 0), 1);
  EXPECT_EQ(month_of_row(ds, 31 * 1440 - 1), 1);
  EXPECT_EQ(month_of_row(ds, 31 * 1440), 2);
  EXPECT_EQ(month_of_row(ds, 364 * 1440), 12);
  ds.origin = std::chrono::sys_days{std::chrono::year{2024} / 2 / 28};
  EXPECT_EQ(month_of_row(ds, 1440), 2);  // leap day
  EXPECT_EQ(month_of_row(ds, 2 * 1440), 3);
}

TEST(Calendar, Seasons) {
  EXPECT_EQ(bucket_label(BucketKind::season, 12), "Winter");
  EXPECT_EQ(bucket_label(BucketKind::season, 2), "Winter");
  EXPECT_EQ(bucket_label(BucketKind::season, 3), "Spring");
  EXPECT_EQ(bucket_label(BucketKind::season, 8), "Summer");
  EXPECT_EQ(bucket_label(BucketKind::season, 11), "Autumn");
  EXPECT_EQ(bucket_label(BucketKind::month, 4), "Apr");
  EXPECT_THROW(parse_bucket_kind("week"), ConfigError);
}

TEST(Report, MeansExcludeDivergedEpisodes) {
  const auto r = build_report({ep(0, 1, 1.0, 10.0), ep(1, 1, 3.0, 30.0), ep(2, 2, 5.0, 50.0), ep(3, 2, 0, 0, true)},
                              BucketKind::month);
  EXPECT_EQ(r.count, 3);
  EXPECT_EQ(r.diverged, 1);
  EXPECT_DOUBLE_EQ(r.mean_mse, 3.0);
  EXPECT_DOUBLE_EQ(r.mean_dtw, 30.0);
  ASSERT_EQ(r.buckets.size(), 2u);
  EXPECT_EQ(r.buckets[0].bucket, "Jan");
  EXPECT_DOUBLE_EQ(r.buckets[0].mean_mse, 2.0);
  EXPECT_EQ(r.buckets[1].count, 1);
  const auto s = build_report(r.episodes, BucketKind::season);
  ASSERT_EQ(s.buckets.size(), 1u);
  EXPECT_EQ(s.buckets[0].bucket, "Winter");
}

TEST(Evaluate, PerfectPredictorScoresZero) {
  SyntheticPlantConfig c;
  c.days = 3;
  c.noise_std = 0.0;
  const auto ds = gen_synthetic(c);
  const auto eps = day_episodes(ds, 10, 1, 3);
  ASSERT_EQ(eps.size(), 2u);
  const auto rep = evaluate(PlantPredictor{c}, ds, eps, BucketKind::month);
  EXPECT_EQ(rep.count, 2);
  EXPECT_EQ(rep.mean_mse, 0.0);
  EXPECT_EQ(rep.mean_dtw, 0.0);
}

TEST(Evaluate, MetricsMatchDirectComputation) {
  SyntheticPlantConfig c;
  c.days = 3;
  const auto ds = gen_synthetic(c);
  SyntheticPlantConfig off = c;
  off.k_r = 0.02;
  const auto eps = day_episodes(ds, 10, 1, 3);
  const auto m = evaluate_episode(PlantPredictor{off}, ds, eps[0]);
  const auto traj = rollout_from(PlantPredictor{off}, eps[0].input, 3, eps[0].controls);
  EXPECT_EQ(m.mse, mse_multi(traj.states, eps[0].targets));
  EXPECT_EQ(m.dtw, dtw_value(cost_matrix(traj.states, eps[0].targets)));
  EXPECT_EQ(m.month, 1);
  EXPECT_EQ(m.start_index, 1439);
}

TEST(Compare, PercentImprovementAndPivot) {
  const auto a = build_report({ep(0, 1, 2.0, 100.0), ep(1, 2, 4.0, 50.0)}, BucketKind::month);
  const auto b = build_report({ep(0, 1, 1.0, 25.0), ep(1, 2, 4.0, 60.0)}, BucketKind::month);
  const auto s = compare(a, b);
  ASSERT_EQ(s.rows.size(), 3u);
  EXPECT_EQ(s.rows[0].bucket, "Jan");
  EXPECT_DOUBLE_EQ(s.rows[0].pct_mse, 50.0);
  EXPECT_DOUBLE_EQ(s.rows[0].pct_dtw, 75.0);
  EXPECT_DOUBLE_EQ(s.rows[1].pct_mse, 0.0);
  EXPECT_DOUBLE_EQ(s.rows[1].pct_dtw, -20.0);
  EXPECT_EQ(s.overall().bucket, "overall");
  EXPECT_DOUBLE_EQ(s.overall().mse_a, 3.0);
  EXPECT_DOUBLE_EQ(s.overall().delta_mse, 0.5);
}

TEST(Compare, DropsEpisodesDivergedOnEitherSide) {
  const auto a = build_report({ep(0, 1, 2.0, 10.0), ep(1, 1, 4.0, 20.0, true)}, BucketKind::month);
  const auto b = build_report({ep(0, 1, 1.0, 5.0), ep(1, 1, 1.0, 5.0)}, BucketKind::month);
  const auto s = compare(a, b);
  EXPECT_EQ(s.overall().count, 1);
  EXPECT_DOUBLE_EQ(s.overall().mse_b, 1.0);
}

TEST(Compare, MismatchedEpisodeSetsRejected) {
  const auto a = build_report({ep(0, 1, 2.0, 10.0)}, BucketKind::month);
  const auto b = build_report({ep(5, 1, 1.0, 5.0)}, BucketKind::month);
  EXPECT_THROW(compare(a, b), ConfigError);
  EXPECT_THROW(compare(a, build_report({}, BucketKind::month)), ConfigError);
}

TEST(Csv, EpisodeReportRoundTripIsBitExact) {
  TempDir dir("eval");
  const auto r = build_report({ep(1439, 1, 0.1234567890123, 1e-7), ep(2879, 3, 1.0 / 3.0, 12345.678),
                               ep(4319, 3, 0, 0, true)},
                              BucketKind::season);
  write_episode_csv(r, dir.file("e.csv"));
  write_bucket_csv(r, dir.file("b.csv"));
  const auto back = read_episode_csv(dir.file("e.csv"), BucketKind::season);
  ASSERT_EQ(back.episodes.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.episodes[i].start_index, r.episodes[i].start_index);
    EXPECT_EQ(back.episodes[i].mse, r.episodes[i].mse);
    EXPECT_EQ(back.episodes[i].dtw, r.episodes[i].dtw);
    EXPECT_EQ(back.episodes[i].diverged, r.episodes[i].diverged);
  }
  write_episode_csv(back, dir.file("e2.csv"));
  EXPECT_EQ(testing_support::slurp(dir.file("e.csv")), testing_support::slurp(dir.file("e2.csv")));
  const auto buckets = testing_support::slurp(dir.file("b.csv"));
  EXPECT_EQ(buckets.rfind("bucket,count,mean_mse,mean_dtw\n", 0), 0u);
  EXPECT_NE(buckets.find("overall,2,"), std::string::npos);
}

TEST(Csv, MalformedEpisodeReportRejected) {
  TempDir dir("evalbad");
  testing_support::spit(dir.file("e.csv"), "start_index,month,horizon,mse,dtw,diverged\n1,13,5,0.1,0.2,0\n");
  EXPECT_THROW(read_episode_csv(dir.file("e.csv"), BucketKind::month), FormatError);
  testing_support::spit(dir.file("e.csv"), "start,month\n");
  EXPECT_THROW(read_episode_csv(dir.file("e.csv"), BucketKind::month), FormatError);
}
