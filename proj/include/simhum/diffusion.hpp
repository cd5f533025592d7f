#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace simhum {

inline constexpr double kCosineOffset = 0.008;
inline constexpr double kMaxBeta = 0.999;

// Squared-cosine DDPM schedule. alpha_bars[t] = f(t) / f(0) for t in [0, T).
struct NoiseSchedule {
  int train_steps = 100;
  double s_offset = kCosineOffset;
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  int inference_steps = 8;
  std::vector<int> inference_timesteps;  // strictly decreasing, T-1 ... 0

  // "t\tbeta\talpha_bar" rows.
  std::string to_table() const;
};

// f(t) = cos^2(((t / T + s) / (1 + s)) * pi / 2)
double cosine_f(double t, int T, double s);

NoiseSchedule build_schedule(int T = 100, double s_offset = kCosineOffset, int inference_steps = 8);

// Evenly spaced: round(i * (T - 1) / (n - 1)) for i = n-1 ... 0.
std::vector<int> strided_timesteps(int T, int n);

// z_t = sqrt(ab_t) x + sqrt(1 - ab_t) eps, with one timestep per leading batch row.
torch::Tensor add_noise(const torch::Tensor& chunk, const torch::Tensor& t, const torch::Tensor& epsilon,
                        const NoiseSchedule& schedule);
torch::Tensor add_noise(const torch::Tensor& chunk, int t, const torch::Tensor& epsilon, const NoiseSchedule& schedule);

// Standard normal tensor drawn from a std::mt19937_64 stream (row-major fill order).
torch::Tensor normal_tensor(torch::IntArrayRef shape, std::mt19937_64& rng,
                            torch::ScalarType dtype = torch::kFloat32);

enum class SampleMode { Full, Accelerated };
enum class PosteriorVariance { Small, Large };

struct SamplerOptions {
  SampleMode mode = SampleMode::Accelerated;
  bool clip_x0 = true;
  double clip_value = 1.0;
  PosteriorVariance variance = PosteriorVariance::Small;
};

// Predicts epsilon for a noisy batch z (B x H x d) at per-row timesteps t (B, int64).
using Denoiser = std::function<torch::Tensor(const torch::Tensor& z, const torch::Tensor& t)>;

// Ancestral DDPM sampling over the full or strided timestep list; posterior
// coefficients come from alpha_bar ratios between consecutive retained steps.
torch::Tensor sample(const Denoiser& denoiser, torch::IntArrayRef shape, const NoiseSchedule& schedule,
                     const SamplerOptions& options, std::mt19937_64& rng,
                     torch::ScalarType dtype = torch::kFloat32);

}  // namespace simhum
