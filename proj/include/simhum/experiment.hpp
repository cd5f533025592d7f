#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "simhum/config.hpp"
#include "simhum/dataset.hpp"
#include "simhum/diffusion.hpp"
#include "simhum/evaluation.hpp"
#include "simhum/policy.hpp"
#include "simhum/toyworld.hpp"
#include "simhum/training.hpp"

namespace simhum {

struct GenerationConfig {
  std::string task = kStackDiscs;
  int n_sim = 100;
  int n_human = 100;
  int n_real = 16;
  int real_per_variant = 2;  // REAL episodes per single-factor ID variant; the rest are base scenes
  double human_capture_hz = 30.0;
  int human_idle_max = 6;    // static capture frames before and after the motion
  int max_distractors = 6;   // SIM and HUMAN clutter count upper bound
  double expert_noise = 0.01;
  RenderOptions render;
};

struct Pools {
  std::vector<Episode> sim, human, real;
};

// Raw 30 Hz absolute-pose human capture -> relative actions, static trimming, 10 Hz.
Episode process_human(const Episode& raw, double target_hz = 10.0);

// Each episode draws from its own (seed, domain, index) stream. Scenes the
// expert cannot solve are redrawn.
Pools generate_pools(const GenerationConfig& config, const Catalog& catalog, std::uint64_t seed);

void write_pools(const Pools& pools, const std::filesystem::path& dir);
// Throws IoError naming the missing artifact.
Pools read_pools(const std::filesystem::path& dir, const EpisodeFilter& human_filter = {});

// Evenly strided subset of n episodes; ConfigError (naming `what`) when the pool is too small.
std::vector<Episode> take_episodes(const std::vector<Episode>& pool, int n, const std::string& what);

// ---- experiment configuration --------------------------------------------------

struct ExperimentConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;
  GenerationConfig generate;
  PolicyConfig policy;
  int diffusion_steps = 100;
  int inference_steps = 8;
  SamplerOptions sampler;
  TrainConfig pretrain;
  TrainConfig finetune;
  RolloutConfig rollout;
  std::string battery = "ood";
  int trials = 10;
  GridSpec grid;
  std::vector<double> alphas{0.1, 0.5, 0.9};
  int seeds = 1;

  NoiseSchedule schedule() const;
  // Applies the document on top of the preset it names (desk by default).
  // Unknown keys throw ConfigError.
  static ExperimentConfig from_kv(const KeyValueConfig& kv);
  KeyValueConfig to_kv() const;
};

// Built-in "desk" and "paper" documents.
KeyValueConfig preset_config(const std::string& name);
// Preset (explicit, else the file's own `preset` key, else desk), then the
// optional config file, then "section.key=value" overrides.
ExperimentConfig resolve_config(const std::optional<std::string>& preset, const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides = {});
void write_resolved_config(const ExperimentConfig& config, const std::filesystem::path& dir);

// ---- recipes -------------------------------------------------------------------

struct TrainedPolicy {
  FinetuneMode mode = FinetuneMode::SimHum;
  std::optional<double> alpha;
  PolicyBundle bundle;
  std::optional<PolicyBundle> pretrained;
  std::vector<LogRow> pretrain_log, finetune_log;
};

// Pretraining stage of a mode (RealOnly: an untrained bundle).
TrainResult pretrain_for_mode(const Pools& pools, FinetuneMode mode, const ExperimentConfig& config,
                              std::uint64_t seed, std::optional<double> alpha = {},
                              const std::filesystem::path& out = {});

// Full two-stage recipe. `alpha` overrides the mode's pretraining ratio.
TrainedPolicy train_mode(const Pools& pools, FinetuneMode mode, const ExperimentConfig& config, std::uint64_t seed,
                         std::optional<double> alpha = {}, const std::filesystem::path& out = {});

EvalReport evaluate_policy(const PolicyBundle& bundle, const ExperimentConfig& config, const std::vector<Scenario>& scenarios,
                           std::uint64_t seed, const std::string& label);
EvalReport grid_evaluate_policy(const PolicyBundle& bundle, const ExperimentConfig& config, std::uint64_t seed,
                                const std::string& label);

// ---- analyses ------------------------------------------------------------------

// OOD scenario that varies only the held-out value of one factor.
Scenario ablation_scenario(const std::string& factor);

struct AblationResult {
  std::string factor;
  EvalReport full, without;
};

// Two SimHum policies, full vs base-only human data for `factor`, same seeds.
AblationResult factor_ablation(const Pools& pools, const std::string& factor, const ExperimentConfig& config,
                               std::uint64_t seed);

struct BudgetRow {
  std::string label;
  FinetuneMode mode = FinetuneMode::RealOnly;
  int n_real = 0, n_sim = 0, n_hum = 0;
};

// Paper-preset budget compositions scaled by `scale` (desk: 1/5).
std::vector<BudgetRow> budget_rows(double scale);

struct SweepRow {
  std::string label;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  EvalReport report;
};

std::vector<SweepRow> budget_sweep(const Pools& pools, const std::vector<BudgetRow>& rows, const ExperimentConfig& config,
                                   const std::vector<std::uint64_t>& seeds);
std::vector<SweepRow> alpha_sweep(const Pools& pools, const std::vector<double>& alphas, const ExperimentConfig& config,
                                  const std::vector<std::uint64_t>& seeds);

// "label\talpha\tseed\tn\tsr\tsr_se\tpr\tpr_se" rows.
std::string sweep_table(const std::vector<SweepRow>& rows);

}  // namespace simhum
