#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "simhum/errors.hpp"
#include "simhum/evaluation.hpp"

using namespace simhum;

namespace {

const char* kTask = "stack_two_discs";

RolloutConfig small_rollout() {
  RolloutConfig c;
  c.render.height = 16;
  c.render.width = 16;
  return c;
}

std::vector<int> random_scores(std::mt19937_64& rng, int n, int s_max) {
  std::uniform_int_distribution<int> u(0, s_max);
  std::vector<int> s(static_cast<std::size_t>(n));
  for (auto& v : s) v = u(rng);
  return s;
}

}  // namespace

TEST(Metrics, WorkedExamples) {
  EXPECT_DOUBLE_EQ(success_rate({3, 3, 3, 3}, 3), 100.0);
  EXPECT_DOUBLE_EQ(success_rate({3, 3, 1, 0}, 3), 50.0);
  EXPECT_DOUBLE_EQ(success_rate(std::vector<int>(20, 0), 3), 0.0);
  EXPECT_DOUBLE_EQ(progress_rate({3, 3, 1, 0}, 3), 100.0 * 7 / 12);
  EXPECT_DOUBLE_EQ(progress_rate({2, 2}, 2), 100.0);
  EXPECT_DOUBLE_EQ(success_rate({2, 2}, 2), 100.0);
  EXPECT_THROW(success_rate({}, 3), ArgumentError);
  EXPECT_THROW(progress_rate({}, 3), ArgumentError);
  EXPECT_THROW(progress_rate({4}, 3), ArgumentError);
  EXPECT_THROW(success_rate({-1}, 3), ArgumentError);
  EXPECT_THROW(success_rate({0}, 0), ArgumentError);
}

TEST(Metrics, RandomTablesMatchCountingOracle) {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 50; ++k) {
    const int s_max = 1 + static_cast<int>(rng() % 5);
    const int n = 1 + static_cast<int>(rng() % 60);
    const auto s = random_scores(rng, n, s_max);
    int full = 0;
    long total = 0;
    for (int v : s) {
      full += v == s_max;
      total += v;
    }
    EXPECT_EQ(success_rate(s, s_max), 100.0 * full / n);
    EXPECT_EQ(progress_rate(s, s_max), 100.0 * static_cast<double>(total) / (static_cast<double>(n) * s_max));
    EXPECT_GE(progress_rate(s, s_max), success_rate(s, s_max));
  }
}

TEST(Metrics, StandardErrorsAgreeWithBootstrap) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 5; ++k) {
    const auto s = random_scores(rng, 40, 3);
    std::vector<double> srs, prs;
    std::uniform_int_distribution<int> pick(0, 39);
    for (int b = 0; b < 20000; ++b) {
      std::vector<int> r(40);
      for (auto& v : r) v = s[static_cast<std::size_t>(pick(rng))];
      srs.push_back(success_rate(r, 3));
      prs.push_back(progress_rate(r, 3));
    }
    auto sd = [](const std::vector<double>& v) {
      double m = 0, q = 0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      for (double x : v) q += (x - m) * (x - m);
      return std::sqrt(q / static_cast<double>(v.size() - 1));
    };
    const double sr_se = success_rate_se(s, 3), pr_se = progress_rate_se(s, 3);
    if (sr_se > 0) EXPECT_NEAR(sd(srs), sr_se, 0.1 * sr_se);
    EXPECT_NEAR(sd(prs), pr_se, 0.1 * pr_se);
  }
}

TEST(Battery, SizesAndHeldOutFactors) {
  const auto cat = Catalog::builtin();
  const auto id = id_battery();
  const auto ood = ood_battery();
  EXPECT_EQ(id.size(), 4u);
  EXPECT_EQ(ood.size(), 2u);
  for (const auto& s : ood) {
    EXPECT_TRUE(s.ood);
    EXPECT_TRUE(cat.backgrounds.at(s.factors.bg).held_out) << s.id;
    EXPECT_TRUE(cat.distractors.at(s.factors.dist).held_out) << s.id;
  }
  for (const auto& s : id) EXPECT_FALSE(s.ood);
  EXPECT_THROW(battery("nope"), ConfigError);
}

TEST(Trials, BatteryCountsAndDeterminism) {
  const auto cat = Catalog::builtin();
  IdlePolicy idle;
  const auto cfg = small_rollout();
  const auto id = run_trials(idle, kTask, id_battery(), 10, 3, cfg, cat);
  EXPECT_EQ(id.size(), 40u);
  const auto ood = run_trials(idle, kTask, ood_battery(), 10, 3, cfg, cat);
  EXPECT_EQ(ood.size(), 20u);

  ExpertReplayPolicy a(kTask), b(kTask);
  const auto ra = run_trials(a, kTask, ood_battery(), 3, 9, cfg, cat);
  const auto rb = run_trials(b, kTask, ood_battery(), 3, 9, cfg, cat);
  ASSERT_EQ(ra.size(), rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) {
    EXPECT_EQ(ra[i].seed, rb[i].seed);
    EXPECT_EQ(ra[i].score, rb[i].score);
    EXPECT_EQ(ra[i].length, rb[i].length);
  }
  const auto agg = aggregate(ra);
  EXPECT_EQ(agg.n_effective, 6);
  EXPECT_DOUBLE_EQ(agg.sr, 100.0);
}

TEST(Trials, ScoresStayInRangeAndAggregatesRecompute) {
  const auto cat = Catalog::builtin();
  IdlePolicy idle;
  const auto trials = run_trials(idle, kTask, id_battery(), 3, 1, small_rollout(), cat);
  std::vector<int> scores;
  for (const auto& t : trials) {
    EXPECT_GE(t.score, 0);
    EXPECT_LE(t.score, t.max_score);
    if (t.valid) scores.push_back(t.score);
  }
  const auto r = make_report(kTask, "idle", trials);
  EXPECT_EQ(r.overall.sr, success_rate(scores, 3));
  EXPECT_EQ(r.overall.pr, progress_rate(scores, 3));
  EXPECT_EQ(r.per_scenario.size(), 4u);
}

TEST(Trials, InvalidTrialsAreKeptButExcludedFromN) {
  std::vector<TrialResult> t(3);
  for (auto& r : t) {
    r.max_score = 3;
    r.score = 3;
  }
  t[1].valid = false;
  t[1].score = 0;
  t[1].invalid_reason = "scene generation: test";
  const auto r = make_report(kTask, "x", t);
  EXPECT_EQ(r.overall.n_raw, 3);
  EXPECT_EQ(r.overall.n_effective, 2);
  EXPECT_DOUBLE_EQ(r.overall.sr, 100.0);
  EXPECT_EQ(r.trials.size(), 3u);
}

TEST(Grid, ExpertReachesEveryCellAndIdleNone) {
  const auto cat = Catalog::builtin();
  GridSpec g;
  g.trials_per_cell = 2;
  ExpertReplayPolicy expert(kTask);
  const auto r = grid_eval(expert, kTask, g, 5, small_rollout(), cat);
  ASSERT_TRUE(r.grid);
  EXPECT_EQ(r.grid->cells.size(), 16u);
  EXPECT_EQ(r.trials.size(), 32u);
  int seen = 0;
  for (const auto& c : r.grid->cells) {
    EXPECT_DOUBLE_EQ(c.mean_pr, 100.0) << c.row << "," << c.col;
    seen += c.seen;
  }
  EXPECT_EQ(seen, 9);

  IdlePolicy idle;
  const auto z = grid_eval(idle, kTask, g, 5, small_rollout(), cat);
  for (const auto& c : z.grid->cells) EXPECT_DOUBLE_EQ(c.mean_pr, 0.0);
  EXPECT_DOUBLE_EQ(z.grid->seen_mean_pr(), 0.0);
  EXPECT_DOUBLE_EQ(z.grid->unseen_mean_pr(), 0.0);
}

TEST(Grid, SeenCellsFormTheInnerBlock) {
  const auto cells = grid_cells(GridSpec{}, Catalog::builtin());
  ASSERT_EQ(cells.size(), 16u);
  for (const auto& c : cells) EXPECT_EQ(c.seen, c.col >= 1 && c.row <= 2) << c.row << "," << c.col;
}

TEST(Grid, CellOutsideWorkspaceIsConfigError) {
  GridSpec g;
  g.jitter = 0.5;
  EXPECT_THROW(grid_cells(g, Catalog::builtin()), ConfigError);
  GridSpec bad_region;
  bad_region.region = "nowhere";
  EXPECT_THROW(grid_cells(bad_region, Catalog::builtin()), ConfigError);
}

TEST(Report, JsonRoundTrip) {
  const auto cat = Catalog::builtin();
  GridSpec g;
  g.trials_per_cell = 1;
  IdlePolicy idle;
  auto r = grid_eval(idle, kTask, g, 2, small_rollout(), cat);
  r.label = "idle";
  const auto path = std::filesystem::temp_directory_path() / "simhum_report_test.json";
  r.save(path);
  const auto l = EvalReport::load(path);
  EXPECT_EQ(l.to_json(), r.to_json());
  EXPECT_EQ(l.trials.size(), r.trials.size());
  ASSERT_TRUE(l.grid);
  EXPECT_EQ(l.grid->cells.size(), 16u);
  EXPECT_THROW(EvalReport::from_json(nlohmann::json{{"task", 1}}), FormatError);
  EXPECT_THROW(EvalReport::load("/nonexistent/report.json"), IoError);
}
