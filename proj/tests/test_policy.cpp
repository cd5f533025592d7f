#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "simhum/errors.hpp"
#include "simhum/policy.hpp"
#include "simhum/training.hpp"
#include "support/fixtures.hpp"

using namespace simhum;
namespace fx = simhum::fixtures;

namespace {

// Parameter count written out layer by layer.
std::int64_t expected_count(const PolicyConfig& c) {
  const std::int64_t D = c.hidden, V = c.views, m = c.ff_mult;
  const auto [c1, c2, c3] = c.conv_channels;
  auto linear = [](std::int64_t in, std::int64_t out) { return in * out + out; };
  const std::int64_t vision = (3 * c1 * 25 + c1) + (c1 * c2 * 9 + c2) + (c2 * c3 * 9 + c3);
  const std::int64_t cells = ((c.image_height + 3) / 4) * ((c.image_width + 3) / 4);
  const std::int64_t adaptor = linear(c3 * cells, D) + linear(D, D);
  const std::int64_t attention = 4 * linear(D, D);
  const std::int64_t ff = linear(D, m * D) + linear(m * D, D);
  const std::int64_t encoder = 2 * D + attention + 2 * D + ff;
  const std::int64_t decoder = linear(D, 4 * D) + attention + 2 * D + attention + ff;
  const std::int64_t backbone = 2 * linear(D, D) + (V + 1) * D + c.horizon * D + c.encoder_layers * encoder +
                                c.decoder_layers * decoder + 2 * D;
  std::int64_t n = V * vision + adaptor + backbone;
  n += linear(c.robot_state_dim, D) + linear(c.robot_action_dim, D) + linear(D, D) + linear(D, c.robot_action_dim);
  if (c.has_sim_adaptors) n += V * adaptor;
  if (c.has_human_branch) {
    n += linear(c.human_state_dim, D) + linear(c.human_action_dim, D) + linear(D, D) + linear(D, c.human_action_dim);
  }
  return n;
}

torch::Tensor run(const PolicyBundle& b, const std::vector<TrainingSample>& s, std::uint64_t seed = 4) {
  const auto batch = make_batch(b, s);
  std::mt19937_64 rng(seed);
  const auto dt = b.config.double_precision ? torch::kFloat64 : torch::kFloat32;
  const auto z = normal_tensor({batch.actions.size(0), batch.actions.size(1), batch.actions.size(2)}, rng, dt);
  const auto t = torch::full({batch.actions.size(0)}, 37, torch::kInt64);
  torch::NoGradGuard g;
  return predict_noise(b, batch, z, t);
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "simhum_test_policy";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Policy, ParameterCountMatchesHandCount) {
  EXPECT_EQ(init_policy(fx::tiny_config(), 0).parameter_count(), 974);
  for (const auto& c : {fx::tiny_config(), fx::small_config(), PolicyConfig{}}) {
    EXPECT_EQ(init_policy(c, 0).parameter_count(), expected_count(c));
  }
  auto two = fx::small_config();
  two.views = 2;
  EXPECT_EQ(init_policy(two, 0).parameter_count(), expected_count(two));
}

TEST(Policy, SeedsChangeValuesNotStructure) {
  const auto a = init_policy(fx::small_config(), 1);
  const auto b = init_policy(fx::small_config(), 2);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (const auto& [name, t] : pa) EXPECT_EQ(t.sizes(), pb.at(name).sizes()) << name;
  EXPECT_NE(a.checksum(), b.checksum());
  EXPECT_EQ(a.checksum(), init_policy(fx::small_config(), 1).checksum());
}

TEST(Policy, InitScheme) {
  const auto b = init_policy(PolicyConfig{}, 3);
  for (const auto& [name, t] : b.named_parameters()) {
    const auto d = t.to(torch::kFloat64);
    if (name.find(".ln") != std::string::npos || name.find("final_ln") != std::string::npos) {
      EXPECT_TRUE(torch::equal(d, name.ends_with("weight") ? torch::ones_like(d) : torch::zeros_like(d))) << name;
    } else if (name.ends_with("_pos")) {
      EXPECT_NEAR(d.std().item<double>(), 0.02, 0.006) << name;
    } else if (name.ends_with(".bias")) {
      EXPECT_EQ(d.abs().max().item<double>(), 0.0) << name;
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.numel() / t.size(0)));
      EXPECT_LE(d.abs().max().item<double>(), bound) << name;
    }
  }
}

TEST(Policy, TwoViewsGetOwnEncodersAndAdaptors) {
  auto c = fx::small_config();
  c.views = 2;
  const auto b = init_policy(c, 0);
  std::set<std::string> modules;
  for (const auto& [name, _] : b.named_parameters()) modules.insert(module_of(name));
  for (const char* m : {"vision_encoder_0", "vision_encoder_1", "sim_adaptor_0", "sim_adaptor_1", "real_adaptor"}) {
    EXPECT_TRUE(modules.contains(m)) << m;
  }
  EXPECT_FALSE(modules.contains("real_adaptor_1"));
}

TEST(Policy, RoutingTable) {
  const auto c = fx::small_config();
  const auto sim = routed_modules(c, DomainTag::Sim);
  const auto hum = routed_modules(c, DomainTag::Human);
  const auto real = routed_modules(c, DomainTag::Real);
  EXPECT_TRUE(sim.contains("sim_adaptor_0") && sim.contains("head_robot") && !sim.contains("real_adaptor"));
  EXPECT_TRUE(hum.contains("real_adaptor") && hum.contains("head_human") && !hum.contains("sim_adaptor_0"));
  EXPECT_TRUE(real.contains("real_adaptor") && real.contains("head_robot") && !real.contains("head_human"));
  for (const auto* s : {&sim, &hum, &real}) EXPECT_TRUE(s->contains("backbone") && s->contains("vision_encoder_0"));
}

TEST(Policy, OutputDimsFollowTheRoute) {
  auto b = init_policy(fx::small_config(), 0);
  fx::set_unit_norm(b);
  b.net->eval();
  std::mt19937_64 rng(1);
  EXPECT_EQ(run(b, fx::random_batch(b.config, DomainTag::Sim, 3, rng)).sizes(), (std::vector<std::int64_t>{3, 4, 8}));
  EXPECT_EQ(run(b, fx::random_batch(b.config, DomainTag::Human, 2, rng)).sizes(), (std::vector<std::int64_t>{2, 4, 22}));
  std::vector<TrainingSample> mixed = fx::random_batch(b.config, DomainTag::Sim, 1, rng);
  mixed.push_back(fx::random_sample(b.config, DomainTag::Human, rng));
  EXPECT_THROW(make_batch(b, mixed), RoutingError);
}

TEST(Policy, BranchIsolationInForward) {
  // Perturbing the human branch and sim adaptors leaves REAL outputs unchanged.
  auto b = init_policy(fx::small_config(), 0);
  fx::set_unit_norm(b);
  b.net->eval();
  std::mt19937_64 rng(2);
  const auto real = fx::random_batch(b.config, DomainTag::Real, 3, rng);
  const auto before = run(b, real);
  reinitialize_modules(b, {"sim_adaptor_0", "state_encoder_human", "action_projector_human", "head_human"}, 99);
  EXPECT_TRUE(torch::equal(before, run(b, real)));
  reinitialize_modules(b, {"real_adaptor"}, 99);
  EXPECT_FALSE(torch::equal(before, run(b, real)));
}

TEST(Policy, BackboneReceivesGradientsFromBothDomains) {
  auto b = init_policy(fx::small_config(), 0);
  fx::set_unit_norm(b);
  b.net->eval();
  const auto sch = build_schedule();
  std::mt19937_64 rng(3);
  for (DomainTag d : {DomainTag::Sim, DomainTag::Human}) {
    b.net->zero_grad();
    loss_eq3(b, fx::random_batch(b.config, d, 4, rng), sch, rng).backward();
    const auto params = b.named_parameters();
    EXPECT_GT(params.at("backbone.time_fc1.weight").grad().abs().sum().item<double>(), 0.0);
    EXPECT_GT(params.at("vision_encoder_0.conv1.weight").grad().abs().sum().item<double>(), 0.0);
    const char* unused = d == DomainTag::Sim ? "head_human.weight" : "head_robot.weight";
    const auto& g = params.at(unused).grad();
    EXPECT_TRUE(!g.defined() || g.abs().sum().item<double>() == 0.0);
  }
}

TEST(Policy, GradientCheckTinyBundle) {
  auto b = init_policy(fx::tiny_config(), 7);
  fx::set_unit_norm(b);
  const auto sch = build_schedule();
  std::mt19937_64 rng(8);
  for (DomainTag d : {DomainTag::Sim, DomainTag::Human, DomainTag::Real}) {
    const auto r = fx::gradient_check(b, fx::random_batch(b.config, d, 3, rng), sch, 9);
    EXPECT_GT(r.checked, 0);
    EXPECT_GE(r.below_1e4, static_cast<int>(std::ceil(0.95 * r.checked))) << to_string(d);
    EXPECT_LT(r.worst, 1e-3) << to_string(d);
  }
}

TEST(Policy, EvalModeIsDeterministic) {
  auto b = init_policy(fx::small_config(), 0);
  fx::set_unit_norm(b);
  std::mt19937_64 rng(5);
  const auto s = fx::random_batch(b.config, DomainTag::Real, 4, rng);
  b.net->eval();
  EXPECT_TRUE(torch::equal(run(b, s), run(b, s)));
}

TEST(Recombination, RetainedParametersCarryOverBitForBit) {
  auto pre = init_policy(fx::small_config(), 11);
  fx::set_unit_norm(pre);
  const auto sums = pre.parameter_checksums();
  auto post = recombine_for_real(pre);
  EXPECT_FALSE(post.config.has_sim_adaptors);
  EXPECT_FALSE(post.config.has_human_branch);
  const auto kept = post.parameter_checksums();
  for (const auto& [name, h] : kept) EXPECT_EQ(h, sums.at(name)) << name;
  for (const auto& [name, _] : sums) {
    const auto m = module_of(name);
    const bool dropped = m.starts_with("sim_adaptor_") || m.ends_with("_human");
    EXPECT_EQ(kept.contains(name), !dropped) << name;
  }
  // Same REAL inputs give identical outputs before and after.
  pre.net->eval();
  post.net->eval();
  std::mt19937_64 rng(6);
  const auto real = fx::random_batch(pre.config, DomainTag::Real, 3, rng);
  EXPECT_TRUE(torch::equal(run(pre, real), run(post, real)));
  EXPECT_THROW(recombine_for_real(post), StructuralError);
  std::vector<TrainingSample> sim = fx::random_batch(pre.config, DomainTag::Sim, 1, rng);
  EXPECT_THROW(run(post, sim), RoutingError);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
  for (bool dbl : {false, true}) {
    auto c = fx::small_config();
    c.double_precision = dbl;
    auto b = init_policy(c, 21);
    fx::set_unit_norm(b);
    const auto path = temp_file(dbl ? "f64.shpt" : "f32.shpt");
    save_policy(b, path);
    const auto l = load_policy(path);
    EXPECT_EQ(l.config, b.config);
    EXPECT_EQ(l.norm, b.norm);
    EXPECT_EQ(l.parameter_checksums(), b.parameter_checksums());
    b.net->eval();
    std::mt19937_64 rng(1);
    const auto s = fx::random_batch(c, DomainTag::Real, 2, rng);
    EXPECT_TRUE(torch::equal(run(b, s), run(l, s)));
  }
  // Recombined bundles round-trip too.
  auto pre = init_policy(fx::small_config(), 1);
  const auto post = recombine_for_real(pre);
  save_policy(post, temp_file("post.shpt"));
  EXPECT_EQ(load_policy(temp_file("post.shpt")).checksum(), post.checksum());
}

TEST(Checkpoint, TamperedFileIsRejected) {
  const auto b = init_policy(fx::tiny_config(), 1);
  const auto path = temp_file("tamper.shpt");
  save_policy(b, path);
  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(f), {});
  }
  bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x5a);
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_policy(path), FormatError);
  EXPECT_THROW(load_policy(temp_file("missing.shpt")), IoError);
}

TEST(Normalization, AffineRoundTripAndConstantDims) {
  Matrix m(3, 2);
  m << 0.0, 5.0, 2.0, 5.0, 4.0, 5.0;
  const auto n = AffineNorm::fit({&m});
  const Eigen::VectorXd x = m.row(1).transpose();
  EXPECT_NEAR(n.normalize(Eigen::Vector2d(0.0, 5.0))(0), -1.0, 1e-15);
  EXPECT_NEAR(n.normalize(Eigen::Vector2d(4.0, 5.0))(0), 1.0, 1e-15);
  EXPECT_EQ(n.normalize(x)(1), 0.0);
  EXPECT_TRUE(n.denormalize(n.normalize(x)).isApprox(x, 1e-15));
}

TEST(PolicyConfig, JsonRoundTripAndChecks) {
  const auto c = fx::small_config();
  EXPECT_EQ(PolicyConfig::from_json(c.to_json()), c);
  auto bad = c;
  bad.heads = 3;
  EXPECT_THROW(bad.check(), ConfigError);
  bad = c;
  bad.hidden = 0;
  EXPECT_THROW(bad.check(), ConfigError);
}
