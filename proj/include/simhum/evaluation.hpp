#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "simhum/diffusion.hpp"
#include "simhum/policy.hpp"
#include "simhum/toyworld.hpp"

namespace simhum {

// ---- metrics -------------------------------------------------------------------

double success_rate(const std::vector<int>& scores, int s_max);
double progress_rate(const std::vector<int>& scores, int s_max);
// Binomial standard error of SR, in percentage points.
double success_rate_se(const std::vector<int>& scores, int s_max);
// Standard error of the mean per-trial progress, in percentage points.
double progress_rate_se(const std::vector<int>& scores, int s_max);

// ---- scenarios -----------------------------------------------------------------

struct Scenario {
  std::string id;
  FactorConfig factors;
  int dist_min = 0;  // distractor count drawn per trial from [dist_min, dist_max]
  int dist_max = 0;
  bool ood = false;
};

// Base scene plus three single-factor variations covered by the REAL pool.
std::vector<Scenario> id_battery();
// Scenes built only from held-out backgrounds, distractors and objects.
std::vector<Scenario> ood_battery();
std::vector<Scenario> battery(const std::string& name);  // "id" or "ood"

// ---- rollouts ------------------------------------------------------------------

struct RolloutConfig {
  int execute_steps = 8;       // actions executed from each chunk before re-planning
  double budget_factor = 4.0;  // step budget = factor x expert episode length
  int batch_size = 64;         // trials rolled out in lockstep
  DomainTag domain = DomainTag::Real;
  RenderOptions render;
  SamplerOptions sampler;
};

struct PlanQuery {
  int trial = 0;
  int step = 0;
  const WorldState* world = nullptr;
  const Frame* frame = nullptr;
};

class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  // Called once per batch with the initial scene of every trial.
  virtual void begin(const std::vector<Scene>& scenes, const Embodiment& body) { (void)scenes, (void)body; }
  // Returns one action chunk (rows = actions, raw units) per query.
  virtual std::vector<Matrix> plan(const std::vector<PlanQuery>& queries) = 0;
};

// Diffusion policy on the REAL route with the accelerated sampler.
class DiffusionPolicy : public RolloutPolicy {
 public:
  DiffusionPolicy(const PolicyBundle& bundle, const NoiseSchedule& schedule, SamplerOptions sampler,
                  std::uint64_t seed, DomainTag domain = DomainTag::Real);
  std::vector<Matrix> plan(const std::vector<PlanQuery>& queries) override;

 private:
  const PolicyBundle& bundle_;
  NoiseSchedule schedule_;
  SamplerOptions sampler_;
  std::mt19937_64 rng_;
  DomainTag domain_;
};

// Replays the noiseless scripted expert for each trial's initial scene.
class ExpertReplayPolicy : public RolloutPolicy {
 public:
  explicit ExpertReplayPolicy(std::string task) : task_(std::move(task)) {}
  void begin(const std::vector<Scene>& scenes, const Embodiment& body) override;
  std::vector<Matrix> plan(const std::vector<PlanQuery>& queries) override;

 private:
  std::string task_;
  std::vector<Matrix> actions_;
};

// Always commands zero motion with open grippers.
class IdlePolicy : public RolloutPolicy {
 public:
  std::vector<Matrix> plan(const std::vector<PlanQuery>& queries) override;
};

struct TrialSpec {
  std::string scenario;
  FactorConfig factors;
  std::uint64_t seed = 0;
  std::optional<Eigen::Vector2d> left_target;  // fixed placement (grid cells)
  std::optional<Eigen::Vector2d> right_target;  // defaults to the mirror of left_target
  int cell = -1;
};

struct TrialResult {
  std::string task;
  std::string scenario;
  std::uint64_t seed = 0;
  int score = 0;
  int max_score = 0;
  int length = 0;
  int cell = -1;
  bool valid = true;
  std::string invalid_reason;
};

// Runs every spec in lockstep and scores the traces.
std::vector<TrialResult> run_specs(RolloutPolicy& policy, const std::string& task, const std::vector<TrialSpec>& specs,
                                   const RolloutConfig& config, const Catalog& catalog);

// n_trials per scenario with per-trial seeds derived from `seed`.
std::vector<TrialResult> run_trials(RolloutPolicy& policy, const std::string& task,
                                    const std::vector<Scenario>& scenarios, int n_trials, std::uint64_t seed,
                                    const RolloutConfig& config, const Catalog& catalog);

// ---- reports -------------------------------------------------------------------

struct Aggregate {
  int n_raw = 0;
  int n_effective = 0;
  double sr = 0.0, pr = 0.0, sr_se = 0.0, pr_se = 0.0;
};

Aggregate aggregate(const std::vector<TrialResult>& trials);

struct GridCell {
  int row = 0;  // 0 = bottom
  int col = 0;  // 0 = outer (far from the centre line)
  bool seen = false;
  Eigen::Vector2d center;
  double mean_pr = 0.0;
  int n = 0;
};

struct GridReport {
  int rows = 0, cols = 0;
  std::vector<GridCell> cells;
  double seen_mean_pr() const;
  double unseen_mean_pr() const;
};

struct EvalReport {
  std::string task;
  std::string label;
  std::vector<std::pair<std::string, Aggregate>> per_scenario;
  Aggregate overall;
  std::vector<TrialResult> trials;
  std::optional<GridReport> grid;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static EvalReport load(const std::filesystem::path& path);
};

EvalReport make_report(const std::string& task, const std::string& label, std::vector<TrialResult> trials);

// ---- grid evaluation -----------------------------------------------------------

struct GridSpec {
  int rows = 4;
  int cols = 4;
  std::string region = "wide";
  std::string seen_region = "seen";
  double jitter = 0.02;
  int trials_per_cell = 10;
};

// Cell centres over the region; a cell is seen when its centre lies inside
// `seen_region`. Throws ConfigError when a cell leaves the workspace.
std::vector<GridCell> grid_cells(const GridSpec& spec, const Catalog& catalog);

EvalReport grid_eval(RolloutPolicy& policy, const std::string& task, const GridSpec& spec, std::uint64_t seed,
                     const RolloutConfig& config, const Catalog& catalog, const FactorConfig& factors = {});

}  // namespace simhum
