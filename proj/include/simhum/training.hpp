#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "simhum/dataset.hpp"
#include "simhum/diffusion.hpp"
#include "simhum/policy.hpp"

namespace simhum {

enum class Stage { Pretrain, Finetune };

// Final checkpoint written into TrainConfig::out_dir.
inline constexpr const char* kPolicyFile = "policy.shpt";

struct TrainConfig {
  Stage stage = Stage::Pretrain;
  int steps = 200000;
  double lr = 1e-4;
  double beta1 = 0.95;
  double beta2 = 0.999;
  double weight_decay = 1e-6;
  int warmup_steps = 2000;
  int batch_size = 64;
  double alpha = 0.5;
  std::uint64_t seed = 0;
  double grad_clip = 1.0;
  double divergence_loss = 1e3;
  int divergence_patience = 100;
  int checkpoint_every = 0;      // 0 disables interval checkpoints
  std::filesystem::path out_dir;  // empty: keep everything in memory

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  void check() const;
};

// Linear warmup to lr over warmup_steps, then cosine decay to 0 at `steps`.
// `step` counts optimizer updates from 1.
double learning_rate(const TrainConfig& config, int step);

struct LogRow {
  int step = 0;
  double lr = 0.0;
  double loss_total = 0.0;
  std::optional<double> loss_sim, loss_hum;
  double grad_norm = 0.0;
  bool clipped = false;
};

std::string log_header();
std::string format_log_row(const LogRow& row);
void write_log(const std::vector<LogRow>& log, const std::filesystem::path& path);

// Per-sample noise and timestep draws, in batch order.
struct NoiseDraw {
  torch::Tensor epsilon;  // B x H x d_a
  torch::Tensor t;        // B, int64
};
NoiseDraw draw_noise(std::int64_t batch, std::int64_t horizon, std::int64_t action_dim, const NoiseSchedule& schedule,
                     std::mt19937_64& rng, torch::ScalarType dtype);

// Mean over chunk rows and action dims of (eps - eps_hat)^2, one value per sample.
torch::Tensor per_sample_loss(const PolicyBundle& bundle, const BatchTensors& batch, const NoiseDraw& noise,
                              const NoiseSchedule& schedule);
// Noise-prediction objective on a single-domain batch (scalar mean).
torch::Tensor loss_eq3(const PolicyBundle& bundle, const BatchTensors& batch, const NoiseDraw& noise,
                       const NoiseSchedule& schedule);
torch::Tensor loss_eq3(const PolicyBundle& bundle, const std::vector<TrainingSample>& batch,
                       const NoiseSchedule& schedule, std::mt19937_64& rng);

struct MixedLoss {
  torch::Tensor total;  // uniform mean over every sample of the mixed batch
  torch::Tensor per_sample_sim, per_sample_hum;
  int n_sim = 0;
  int n_hum = 0;
  std::optional<double> loss_sim, loss_hum;
};

// Splits the mixed batch per domain, draws noise per sample in batch order and
// averages the per-sample losses uniformly. Throws ConfigError when the human
// count differs from human_count(B, alpha).
MixedLoss loss_total(const PolicyBundle& bundle, const std::vector<TrainingSample>& batch, double alpha,
                     const NoiseSchedule& schedule, std::mt19937_64& rng);

// Parameters owned by the given top-level modules (stage-scoped registration).
std::vector<torch::Tensor> parameters_of(const PolicyBundle& bundle, const std::set<std::string>& modules);
std::set<std::string> pretrain_modules(const PolicyConfig& config, double alpha, int batch_size);

// Called after backward and before the optimizer update.
using StepHook = std::function<void(int step, const PolicyBundle& bundle)>;

struct TrainResult {
  PolicyBundle bundle;
  std::vector<LogRow> log;
  std::set<std::string> registered_modules;
};

TrainResult pretrain(const std::vector<Episode>& sim, const std::vector<Episode>& human, const PolicyConfig& policy,
                     const TrainConfig& config, const NoiseSchedule& schedule, const StepHook& hook = {});

enum class FinetuneMode { SimHum, SimReal, HumReal, RealOnly };
std::string to_string(FinetuneMode mode);
FinetuneMode parse_finetune_mode(const std::string& text);
// Co-training ratio used to pretrain each mode (RealOnly has no pretraining).
std::optional<double> pretrain_alpha(FinetuneMode mode);

// Seed used to redraw the robot branch in HumReal mode.
std::uint64_t reinit_seed(std::uint64_t finetune_seed);
inline const std::set<std::string> kRobotBranch = {"state_encoder_robot", "action_projector_robot", "head_robot"};

// Recombines the pretrained bundle (HumReal additionally redraws the robot
// branch) and trains every retained parameter on REAL batches.
TrainResult finetune(const PolicyBundle& pretrained, const std::vector<Episode>& real, FinetuneMode mode,
                     const TrainConfig& config, const NoiseSchedule& schedule, const StepHook& hook = {});

}  // namespace simhum
