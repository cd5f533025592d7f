#include "simhum/diffusion.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "simhum/errors.hpp"
#include "simhum/text.hpp"

namespace simhum {

double cosine_f(double t, int T, double s) {
  const double c = std::cos(((t / T + s) / (1.0 + s)) * std::numbers::pi / 2.0);
  return c * c;
}

std::vector<int> strided_timesteps(int T, int n) {
  if (T < 2) throw ArgumentError("schedule needs T >= 2");
  if (n < 2 || n > T) throw ArgumentError("inference steps must be in [2, T], got " + std::to_string(n));
  std::vector<int> out;
  for (int i = n - 1; i >= 0; --i) {
    out.push_back(static_cast<int>(std::lround(static_cast<double>(i) * (T - 1) / (n - 1))));
  }
  return out;
}

NoiseSchedule build_schedule(int T, double s, int inference_steps) {
  if (T < 2) throw ArgumentError("schedule needs T >= 2, got " + std::to_string(T));
  if (!(s > 0.0)) throw ArgumentError("cosine offset must be positive, got " + format_double(s));
  NoiseSchedule sch;
  sch.train_steps = T;
  sch.s_offset = s;
  const double f0 = cosine_f(0.0, T, s);
  for (int t = 0; t < T; ++t) {
    sch.alpha_bars.push_back(cosine_f(t, T, s) / f0);
    // beta_0 uses the closed form one step back so it stays positive.
    const double beta = 1.0 - cosine_f(t, T, s) / cosine_f(t - 1.0, T, s);
    sch.betas.push_back(std::min(beta, kMaxBeta));
  }
  sch.inference_steps = inference_steps;
  sch.inference_timesteps = strided_timesteps(T, inference_steps);
  return sch;
}

std::string NoiseSchedule::to_table() const {
  std::ostringstream os;
  os << "t\tbeta\talpha_bar\n";
  for (std::size_t t = 0; t < alpha_bars.size(); ++t) {
    os << t << '\t' << format_double(betas[t]) << '\t' << format_double(alpha_bars[t]) << '\n';
  }
  return os.str();
}

torch::Tensor normal_tensor(torch::IntArrayRef shape, std::mt19937_64& rng, torch::ScalarType dtype) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> buf(static_cast<std::size_t>(n));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : buf) v = normal(rng);
  return torch::from_blob(buf.data(), shape, torch::kFloat64).to(dtype).clone();
}

torch::Tensor add_noise(const torch::Tensor& chunk, const torch::Tensor& t, const torch::Tensor& eps,
                        const NoiseSchedule& sch) {
  if (!chunk.sizes().equals(eps.sizes())) throw ArgumentError("epsilon shape must match the action chunk");
  if (t.dim() != 1 || t.size(0) != chunk.size(0)) throw ArgumentError("one timestep per batch row required");
  auto ts = t.to(torch::kInt64).contiguous();
  const auto* p = ts.data_ptr<std::int64_t>();
  std::vector<double> a(static_cast<std::size_t>(ts.size(0))), b(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (p[i] < 0 || p[i] >= sch.train_steps) {
      throw ArgumentError("timestep " + std::to_string(p[i]) + " outside [0, " + std::to_string(sch.train_steps) + ")");
    }
    const double ab = sch.alpha_bars[static_cast<std::size_t>(p[i])];
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  std::vector<std::int64_t> view(static_cast<std::size_t>(chunk.dim()), 1);
  view[0] = chunk.size(0);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ta = torch::from_blob(a.data(), {chunk.size(0)}, opts).to(chunk.scalar_type()).view(view);
  auto tb = torch::from_blob(b.data(), {chunk.size(0)}, opts).to(chunk.scalar_type()).view(view);
  return ta * chunk + tb * eps;
}

torch::Tensor add_noise(const torch::Tensor& chunk, int t, const torch::Tensor& eps, const NoiseSchedule& sch) {
  if (t < 0 || t >= sch.train_steps) {
    throw ArgumentError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sch.train_steps) + ")");
  }
  if (!chunk.sizes().equals(eps.sizes())) throw ArgumentError("epsilon shape must match the action chunk");
  const double ab = sch.alpha_bars[static_cast<std::size_t>(t)];
  return std::sqrt(ab) * chunk + std::sqrt(1.0 - ab) * eps;
}

torch::Tensor sample(const Denoiser& denoiser, torch::IntArrayRef shape, const NoiseSchedule& sch,
                     const SamplerOptions& opt, std::mt19937_64& rng, torch::ScalarType dtype) {
  const std::vector<int> steps = opt.mode == SampleMode::Full ? strided_timesteps(sch.train_steps, sch.train_steps)
                                                              : sch.inference_timesteps;
  torch::NoGradGuard no_grad;
  torch::Tensor z = normal_tensor(shape, rng, dtype);
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const int t = steps[i];
    const int prev = i + 1 < steps.size() ? steps[i + 1] : -1;
    const double ab_t = sch.alpha_bars[static_cast<std::size_t>(t)];
    const double ab_prev = prev >= 0 ? sch.alpha_bars[static_cast<std::size_t>(prev)] : 1.0;

    const torch::Tensor eps = denoiser(z, torch::full({shape[0]}, t, torch::kInt64));
    if (!torch::isfinite(eps).all().item<bool>()) {
      throw SamplingError("denoiser produced a non-finite value at timestep " + std::to_string(t) + " (step " +
                          std::to_string(i) + ")");
    }
    torch::Tensor x0 = (z - std::sqrt(1.0 - ab_t) * eps) / std::sqrt(ab_t);
    if (opt.clip_x0) x0 = x0.clamp(-opt.clip_value, opt.clip_value);
    if (prev < 0) {
      z = x0;
      break;
    }
    const double alpha = ab_t / ab_prev;
    const double beta = 1.0 - alpha;
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab_t);
    const double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab_t);
    const double var = opt.variance == PosteriorVariance::Small ? (1.0 - ab_prev) / (1.0 - ab_t) * beta : beta;
    z = c0 * x0 + ct * z;
    if (var > 0.0) z = z + std::sqrt(var) * normal_tensor(shape, rng, dtype);
  }
  return z;
}

}  // namespace simhum
