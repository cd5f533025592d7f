#pragma once

// Small policies and synthetic data shared by the unit tests and the acceptance runner.

#include <cmath>
#include <random>
#include <vector>

#include "simhum/experiment.hpp"
#include "simhum/policy.hpp"
#include "simhum/training.hpp"

namespace simhum::fixtures {

// 974 parameters with the toy world's robot (8) and human (22) dims.
inline PolicyConfig tiny_config() {
  PolicyConfig c;
  c.image_height = 8;
  c.image_width = 8;
  c.conv_channels = {1, 1, 1};
  c.hidden = 4;
  c.heads = 1;
  c.encoder_layers = 0;
  c.decoder_layers = 1;
  c.ff_mult = 1;
  c.horizon = 2;
  c.double_precision = true;
  return c;
}

// Small but complete network for behavioural tests.
inline PolicyConfig small_config() {
  PolicyConfig c;
  c.image_height = 16;
  c.image_width = 16;
  c.conv_channels = {4, 8, 8};
  c.hidden = 16;
  c.heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ff_mult = 2;
  c.horizon = 4;
  return c;
}

inline AffineNorm unit_norm(int dim) {
  AffineNorm n;
  n.lo = Eigen::VectorXd::Constant(dim, -1.0);
  n.hi = Eigen::VectorXd::Constant(dim, 1.0);
  return n;
}

// Identity normalization so that synthetic samples feed the network as-is.
inline void set_unit_norm(PolicyBundle& b) {
  b.norm.robot_state = unit_norm(b.config.robot_state_dim);
  b.norm.robot_action = unit_norm(b.config.robot_action_dim);
  b.norm.human_state = unit_norm(b.config.human_state_dim);
  b.norm.human_action = unit_norm(b.config.human_action_dim);
}

inline TrainingSample random_sample(const PolicyConfig& c, DomainTag domain, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> px(0, 255);
  const bool robot = is_robot_domain(domain);
  TrainingSample s;
  s.domain = domain;
  for (int v = 0; v < c.views; ++v) {
    Image img(c.image_height, c.image_width);
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(px(rng));
    s.observation.push_back(img);
  }
  s.state = Eigen::VectorXd::NullaryExpr(robot ? c.robot_state_dim : c.human_state_dim, [&] { return u(rng); });
  s.action_chunk = Matrix::NullaryExpr(c.horizon, robot ? c.robot_action_dim : c.human_action_dim, [&] { return u(rng); });
  s.padded.assign(static_cast<std::size_t>(c.horizon), 0);
  return s;
}

inline std::vector<TrainingSample> random_batch(const PolicyConfig& c, DomainTag domain, int n, std::mt19937_64& rng) {
  std::vector<TrainingSample> out;
  for (int i = 0; i < n; ++i) out.push_back(random_sample(c, domain, rng));
  return out;
}

// Toy-world episodes rendered at the config's resolution.
inline Pools tiny_pools(const PolicyConfig& c, int n_sim, int n_human, int n_real, std::uint64_t seed) {
  GenerationConfig g;
  g.n_sim = n_sim;
  g.n_human = n_human;
  g.n_real = n_real;
  g.real_per_variant = 0;
  g.render.height = c.image_height;
  g.render.width = c.image_width;
  g.render.views = c.views;
  return generate_pools(g, Catalog::builtin(), seed);
}

struct GradCheck {
  int checked = 0;
  int below_1e4 = 0;
  double worst = 0.0;
};

// Central finite differences of the single-domain noise-prediction loss over
// every parameter element on the batch's route, against autograd.
inline GradCheck gradient_check(PolicyBundle& bundle, const std::vector<TrainingSample>& samples,
                                const NoiseSchedule& sch, std::uint64_t seed, double h = 1e-6) {
  bundle.net->eval();
  const auto batch = make_batch(bundle, samples);
  std::mt19937_64 rng(seed);
  const auto noise = draw_noise(batch.actions.size(0), batch.actions.size(1), batch.actions.size(2), sch, rng,
                                torch::kFloat64);
  bundle.net->zero_grad();
  loss_eq3(bundle, batch, noise, sch).backward();

  GradCheck r;
  const auto routed = routed_modules(bundle.config, batch.domain);
  for (auto& [name, p] : bundle.named_parameters()) {
    if (!routed.contains(module_of(name))) continue;
    const auto grad = p.grad().defined() ? p.grad().clone() : torch::zeros_like(p);
    auto flat = p.view({-1});
    auto gflat = grad.view({-1});
    for (std::int64_t i = 0; i < flat.numel(); ++i) {
      torch::NoGradGuard g;
      const double orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss_eq3(bundle, batch, noise, sch).item<double>();
      flat[i] = orig - h;
      const double down = loss_eq3(bundle, batch, noise, sch).item<double>();
      flat[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = gflat[i].item<double>();
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      ++r.checked;
      r.below_1e4 += rel < 1e-4;
      r.worst = std::max(r.worst, rel);
    }
  }
  return r;
}

}  // namespace simhum::fixtures
