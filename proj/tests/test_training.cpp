#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "simhum/errors.hpp"
#include "simhum/training.hpp"
#include "support/fixtures.hpp"

using namespace simhum;
namespace fx = simhum::fixtures;

namespace {

TrainConfig short_config(int steps, double alpha, int batch = 8) {
  TrainConfig t;
  t.steps = steps;
  t.warmup_steps = std::min(10, steps);
  t.lr = 1e-3;
  t.batch_size = batch;
  t.alpha = alpha;
  t.seed = 3;
  return t;
}

std::map<std::string, std::uint64_t> select(const std::map<std::string, std::uint64_t>& sums,
                                            const std::set<std::string>& modules) {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, h] : sums)
    if (modules.contains(module_of(name))) out[name] = h;
  return out;
}

const Pools& shared_pools() {
  static const Pools p = fx::tiny_pools(fx::small_config(), 8, 8, 8, 17);
  return p;
}

}  // namespace

TEST(Loss, MixedBatchEqualsWeightedSubBatchMeans) {
  auto b = init_policy(fx::tiny_config(), 1);
  fx::set_unit_norm(b);
  b.net->eval();
  const auto sch = build_schedule();
  std::mt19937_64 gen(2);
  for (int trial = 0; trial < 20; ++trial) {
    const double alpha = std::vector<double>{0.25, 0.5, 0.75}[static_cast<std::size_t>(trial % 3)];
    const int B = 8;
    const int n_hum = human_count(B, alpha);
    std::vector<TrainingSample> batch = fx::random_batch(b.config, DomainTag::Sim, B - n_hum, gen);
    for (auto& s : fx::random_batch(b.config, DomainTag::Human, n_hum, gen)) batch.push_back(s);
    std::shuffle(batch.begin(), batch.end(), gen);

    const std::uint64_t seed = gen();
    std::mt19937_64 rng(seed);
    const auto mixed = loss_total(b, batch, alpha, sch, rng);

    // Replay the per-sample draws and score each sample on its own.
    std::mt19937_64 replay(seed);
    std::uniform_int_distribution<int> ut(0, sch.train_steps - 1);
    double sum_sim = 0.0, sum_hum = 0.0;
    for (const auto& s : batch) {
      const int t = ut(replay);
      const auto eps = normal_tensor({s.action_chunk.rows(), s.action_chunk.cols()}, replay, torch::kFloat64);
      const auto one = make_batch(b, std::vector<TrainingSample>{s});
      const NoiseDraw nd{eps.unsqueeze(0), torch::tensor({static_cast<std::int64_t>(t)})};
      const double l = loss_eq3(b, one, nd, sch).item<double>();
      (s.domain == DomainTag::Human ? sum_hum : sum_sim) += l;
    }
    const double oracle = alpha * sum_hum / n_hum + (1.0 - alpha) * sum_sim / (B - n_hum);
    const double total = mixed.total.item<double>();
    EXPECT_LE(std::abs(total - oracle), 1e-12 * std::abs(oracle)) << "alpha " << alpha;
  }
}

TEST(Loss, RejectsWrongHumanCountAndRealSamples) {
  auto b = init_policy(fx::tiny_config(), 1);
  fx::set_unit_norm(b);
  const auto sch = build_schedule();
  std::mt19937_64 rng(3);
  auto batch = fx::random_batch(b.config, DomainTag::Sim, 4, rng);
  EXPECT_THROW(loss_total(b, batch, 0.5, sch, rng), ConfigError);
  batch.push_back(fx::random_sample(b.config, DomainTag::Real, rng));
  EXPECT_THROW(loss_total(b, batch, 0.0, sch, rng), RoutingError);
}

TEST(Loss, ExactPredictionGivesZeroAndZeroPredictionGivesNoiseEnergy) {
  const auto sch = build_schedule();
  std::mt19937_64 rng(4);
  const auto eps = normal_tensor({64, 16, 8}, rng, torch::kFloat64);
  const auto mse = [](const torch::Tensor& a, const torch::Tensor& b) { return (a - b).pow(2).mean().item<double>(); };
  EXPECT_EQ(mse(eps, eps), 0.0);
  EXPECT_NEAR(mse(eps, torch::zeros_like(eps)), 1.0, 0.03);
  // Quadratic in the prediction error.
  const auto d = normal_tensor({64, 16, 8}, rng, torch::kFloat64);
  EXPECT_NEAR(mse(eps, eps + 2.0 * d), 4.0 * mse(eps, eps + d), 1e-12);

  // Same identities through the network: a zeroed head predicts 0.
  auto b = init_policy(fx::tiny_config(), 2);
  fx::set_unit_norm(b);
  b.net->eval();
  {
    torch::NoGradGuard g;
    b.net->head_robot->weight.zero_();
    b.net->head_robot->bias.zero_();
  }
  const auto batch = make_batch(b, fx::random_batch(b.config, DomainTag::Real, 32, rng));
  const auto nd = draw_noise(32, b.config.horizon, 8, sch, rng, torch::kFloat64);
  EXPECT_NEAR(loss_eq3(b, batch, nd, sch).item<double>(), nd.epsilon.pow(2).mean().item<double>(), 1e-15);
}

TEST(Schedule, LearningRateWarmupThenCosine) {
  TrainConfig t;
  t.steps = 1000;
  t.warmup_steps = 100;
  t.lr = 2e-4;
  EXPECT_DOUBLE_EQ(learning_rate(t, 1), 2e-6);
  EXPECT_DOUBLE_EQ(learning_rate(t, 50), 1e-4);
  EXPECT_DOUBLE_EQ(learning_rate(t, 100), 2e-4);
  EXPECT_NEAR(learning_rate(t, 550), 1e-4, 1e-15);
  EXPECT_NEAR(learning_rate(t, 1000), 0.0, 1e-18);
  for (int s = 101; s < 1000; ++s) EXPECT_LE(learning_rate(t, s + 1), learning_rate(t, s));
  const double p = 0.3;
  EXPECT_NEAR(learning_rate(t, 100 + 270), 2e-4 * 0.5 * (1 + std::cos(std::numbers::pi * p)), 1e-15);
}

TEST(Log, HeaderAndDashForMissingDomain) {
  EXPECT_EQ(log_header(), "step\tlr\tloss_total\tloss_sim\tloss_hum\tgrad_norm\tclipped");
  LogRow r;
  r.step = 3;
  r.lr = 0.5;
  r.loss_total = 1.5;
  r.loss_hum = 1.5;
  r.grad_norm = 2.0;
  r.clipped = true;
  EXPECT_EQ(format_log_row(r), "3\t0.5\t1.5\t-\t1.5\t2\t1");
}

TEST(Pretrain, AlphaOneLeavesRobotBranchAndSimAdaptorsUntouched) {
  const auto& pools = shared_pools();
  auto pc = fx::small_config();
  const auto sch = build_schedule();
  const std::set<std::string> frozen = {"sim_adaptor_0", "state_encoder_robot", "action_projector_robot", "head_robot"};
  const auto initial = select(init_policy(pc, 3).parameter_checksums(), frozen);
  int hooked = 0;
  const auto r = pretrain(pools.sim, pools.human, pc, short_config(20, 1.0), sch, [&](int, const PolicyBundle& b) {
    ++hooked;
    for (const auto& [name, p] : b.named_parameters()) {
      if (!frozen.contains(module_of(name))) continue;
      EXPECT_TRUE(!p.grad().defined() || p.grad().abs().sum().item<double>() == 0.0) << name;
    }
  });
  EXPECT_EQ(hooked, 20);
  EXPECT_EQ(select(r.bundle.parameter_checksums(), frozen), initial);
  for (const auto& m : frozen) EXPECT_FALSE(r.registered_modules.contains(m)) << m;
  EXPECT_NE(select(r.bundle.parameter_checksums(), {"head_human"}),
            select(init_policy(pc, 3).parameter_checksums(), {"head_human"}));
}

TEST(Pretrain, AlphaZeroLeavesHumanBranchUntouched) {
  const auto& pools = shared_pools();
  auto pc = fx::small_config();
  const std::set<std::string> frozen = {"real_adaptor", "state_encoder_human", "action_projector_human", "head_human"};
  const auto initial = select(init_policy(pc, 3).parameter_checksums(), frozen);
  const auto r = pretrain(pools.sim, pools.human, pc, short_config(10, 0.0), build_schedule());
  EXPECT_EQ(select(r.bundle.parameter_checksums(), frozen), initial);
}

TEST(Pretrain, LossDropsOnSmallPools) {
  const auto& pools = shared_pools();
  auto cfg = short_config(500, 0.5, 16);
  cfg.warmup_steps = 20;
  cfg.lr = 2e-3;
  const auto r = pretrain(pools.sim, pools.human, fx::small_config(), cfg, build_schedule());
  auto mean = [&](std::size_t from, std::size_t to) {
    double s = 0.0;
    for (std::size_t i = from; i < to; ++i) s += r.log[i].loss_total;
    return s / static_cast<double>(to - from);
  };
  ASSERT_EQ(r.log.size(), 500u);
  EXPECT_LE(mean(450, 500), 0.5 * mean(0, 50));
  for (const auto& row : r.log) {
    EXPECT_TRUE(row.loss_sim.has_value());
    EXPECT_TRUE(row.loss_hum.has_value());
  }
}

TEST(Pretrain, DeterministicGivenSeed) {
  const auto& pools = shared_pools();
  const auto a = pretrain(pools.sim, pools.human, fx::small_config(), short_config(5, 0.5), build_schedule());
  const auto b = pretrain(pools.sim, pools.human, fx::small_config(), short_config(5, 0.5), build_schedule());
  EXPECT_EQ(a.bundle.checksum(), b.bundle.checksum());
  EXPECT_EQ(a.log.back().loss_total, b.log.back().loss_total);
}

TEST(Pretrain, MissingPoolIsConfigError) {
  const auto& pools = shared_pools();
  EXPECT_THROW(pretrain(pools.sim, {}, fx::small_config(), short_config(2, 0.5), build_schedule()), ConfigError);
  EXPECT_THROW(pretrain({}, pools.human, fx::small_config(), short_config(2, 0.5), build_schedule()), ConfigError);
}

TEST(Pretrain, DivergenceAndNonFiniteLossAreReported) {
  const auto& pools = shared_pools();
  auto cfg = short_config(20, 0.5);
  cfg.divergence_loss = -1.0;  // every loss counts as diverged
  cfg.divergence_patience = 5;
  try {
    pretrain(pools.sim, pools.human, fx::small_config(), cfg, build_schedule());
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 5"), std::string::npos) << e.what();
  }
  auto hook = [](int step, const PolicyBundle& b) {
    if (step == 2) {
      torch::NoGradGuard g;
      b.net->head_robot->weight.fill_(std::nan(""));
    }
  };
  EXPECT_THROW(pretrain(pools.sim, pools.human, fx::small_config(), short_config(5, 0.5), build_schedule(), hook),
               TrainingError);
}

TEST(Finetune, SimRealKeepsPretrainedRealAdaptorAndTrainsEverything) {
  const auto& pools = shared_pools();
  const auto pre = pretrain(pools.sim, {}, fx::small_config(), short_config(5, 0.0), build_schedule());
  EXPECT_EQ(select(pre.bundle.parameter_checksums(), {"real_adaptor"}),
            select(init_policy(fx::small_config(), 3).parameter_checksums(), {"real_adaptor"}));
  std::set<std::string> seen;
  const auto ft = finetune(pre.bundle, pools.real, FinetuneMode::SimReal, short_config(5, 0.0), build_schedule(),
                           [&](int, const PolicyBundle& b) {
                             for (const auto& [name, p] : b.named_parameters())
                               if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) seen.insert(module_of(name));
                           });
  for (const char* m : {"vision_encoder_0", "real_adaptor", "backbone", "state_encoder_robot", "head_robot"}) {
    EXPECT_TRUE(ft.registered_modules.contains(m)) << m;
    EXPECT_TRUE(seen.contains(m)) << m;
  }
  for (const auto& m : ft.registered_modules) EXPECT_FALSE(m.starts_with("sim_adaptor") || m.ends_with("_human")) << m;
  EXPECT_FALSE(ft.bundle.config.has_sim_adaptors);
  EXPECT_EQ(*ft.bundle.norm.robot_state, *pre.bundle.norm.robot_state);
}

TEST(Finetune, HumRealRedrawsRobotBranch) {
  const auto& pools = shared_pools();
  const auto pre = pretrain({}, pools.human, fx::small_config(), short_config(5, 1.0), build_schedule());
  TrainConfig ft_cfg = short_config(1, 0.0);
  ft_cfg.seed = 12;
  PolicyBundle at_start;
  bool captured = false;
  finetune(pre.bundle, pools.real, FinetuneMode::HumReal, ft_cfg, build_schedule(), [&](int step, const PolicyBundle& b) {
    if (step != 1) return;
    const auto sums = b.parameter_checksums();
    // Before the first update the robot branch equals a fresh draw under the reinit seed.
    auto fresh = init_policy(fx::small_config(), 0);
    reinitialize_modules(fresh, kRobotBranch, reinit_seed(12));
    EXPECT_EQ(select(sums, kRobotBranch), select(fresh.parameter_checksums(), kRobotBranch));
    EXPECT_EQ(select(sums, {"backbone", "real_adaptor"}),
              select(pre.bundle.parameter_checksums(), {"backbone", "real_adaptor"}));
    captured = true;
  });
  EXPECT_TRUE(captured);
}

TEST(Finetune, RejectsNonRealEpisodes) {
  const auto& pools = shared_pools();
  const auto b = init_policy(fx::small_config(), 0);
  EXPECT_THROW(finetune(b, pools.sim, FinetuneMode::RealOnly, short_config(2, 0.0), build_schedule()), ConfigError);
  EXPECT_THROW(finetune(b, {}, FinetuneMode::RealOnly, short_config(2, 0.0), build_schedule()), ConfigError);
}

TEST(Finetune, ModeNames) {
  for (auto m : {FinetuneMode::SimHum, FinetuneMode::SimReal, FinetuneMode::HumReal, FinetuneMode::RealOnly}) {
    EXPECT_EQ(parse_finetune_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_finetune_mode("both"), ConfigError);
  EXPECT_EQ(*pretrain_alpha(FinetuneMode::SimHum), 0.5);
  EXPECT_EQ(*pretrain_alpha(FinetuneMode::SimReal), 0.0);
  EXPECT_EQ(*pretrain_alpha(FinetuneMode::HumReal), 1.0);
  EXPECT_FALSE(pretrain_alpha(FinetuneMode::RealOnly).has_value());
}
