#include "simhum/experiment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "simhum/errors.hpp"
#include "simhum/pipeline.hpp"
#include "simhum/text.hpp"

namespace fs = std::filesystem;

namespace simhum {

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t domain, std::uint64_t index, std::uint64_t attempt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(domain), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(attempt)};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> v{};
  seq.generate(v.begin(), v.end());
  out = (static_cast<std::uint64_t>(v[0]) << 32) | v[1];
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

FactorConfig diverse_factors(const Catalog& cat, int max_dist, std::mt19937_64& rng) {
  FactorConfig f;
  f.obj = pick(cat.training_ids("obj"), rng);
  f.dist = pick(cat.training_ids("dist"), rng);
  f.dist_count = f.dist == "none" ? 0 : std::uniform_int_distribution<int>(1, std::max(1, max_dist))(rng);
  f.light = pick(cat.training_ids("light"), rng);
  f.bg = pick(cat.training_ids("bg"), rng);
  f.init = pick(cat.training_ids("init"), rng);
  return f;
}

constexpr int kMaxAttempts = 50;

// Draws factors and a scene, runs the expert and retries unsolvable scenes.
template <typename DrawFactors>
Episode generate_one(const GenerationConfig& gc, const Catalog& cat, DomainTag domain, std::uint64_t seed,
                     std::uint64_t index, const DrawFactors& draw) {
  const TaskSpec task = TaskSpec::get(gc.task);
  const Embodiment body = Embodiment::for_domain(domain);
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(domain), index, static_cast<std::uint64_t>(attempt)));
    const FactorConfig f = draw(rng);
    try {
      const Scene scene = generate_scene(task, f, cat, rng);
      ExpertOptions opt;
      opt.domain = domain;
      opt.noise_sigma = gc.expert_noise;
      opt.render = gc.render;
      if (domain == DomainTag::Human) {
        opt.frequency_hz = gc.human_capture_hz;
        opt.idle_max = gc.human_idle_max;
        opt.action_frame = ActionFrame::Absolute;
      }
      Episode ep = scripted_expert(task, scene, body, opt, rng).episode;
      if (domain == DomainTag::Human) ep = process_human(ep);
      ep.factors = f;
      validate_episode(ep);
      return ep;
    } catch (const GenerationError&) {
      continue;
    }
  }
  throw GenerationError(std::string(to_string(domain)) + " episode " + std::to_string(index) + ": no solvable scene after " +
                        std::to_string(kMaxAttempts) + " attempts");
}

}  // namespace

Episode process_human(const Episode& raw, double target_hz) {
  return resample(prune_static(relativize(raw)), target_hz);
}

Pools generate_pools(const GenerationConfig& gc, const Catalog& cat, std::uint64_t seed) {
  if (gc.n_sim < 0 || gc.n_human < 0 || gc.n_real < 0) throw ConfigError("generate counts must be >= 0");
  if (gc.real_per_variant < 0) throw ConfigError("generate.real_per_variant must be >= 0");
  const auto variants = id_battery();  // base first, then the single-factor variations
  const int n_variant = static_cast<int>(variants.size()) - 1;
  const int n_base = gc.n_real - n_variant * gc.real_per_variant;
  if (n_base < 0) {
    throw ConfigError("generate.n_real = " + std::to_string(gc.n_real) + " cannot hold " +
                      std::to_string(gc.real_per_variant) + " episodes for each of " + std::to_string(n_variant) +
                      " ID variants");
  }
  TaskSpec::get(gc.task);

  Pools p;
  for (int i = 0; i < gc.n_sim; ++i) {
    p.sim.push_back(generate_one(gc, cat, DomainTag::Sim, seed, static_cast<std::uint64_t>(i), [&](std::mt19937_64& r) {
      FactorConfig f = diverse_factors(cat, gc.max_distractors, r);
      f.init = "wide";
      return f;
    }));
  }
  for (int i = 0; i < gc.n_human; ++i) {
    p.human.push_back(generate_one(gc, cat, DomainTag::Human, seed, static_cast<std::uint64_t>(i),
                                   [&](std::mt19937_64& r) { return diverse_factors(cat, gc.max_distractors, r); }));
  }
  for (int i = 0; i < gc.n_real; ++i) {
    const Scenario& sc = i < n_base ? variants[0] : variants[static_cast<std::size_t>(1 + (i - n_base) / std::max(1, gc.real_per_variant))];
    p.real.push_back(generate_one(gc, cat, DomainTag::Real, seed, static_cast<std::uint64_t>(i), [&](std::mt19937_64& r) {
      FactorConfig f = sc.factors;
      f.dist_count = std::uniform_int_distribution<int>(sc.dist_min, sc.dist_max)(r);
      return f;
    }));
  }
  return p;
}

void write_pools(const Pools& pools, const fs::path& dir) {
  write_dataset(pools.sim, dir / "sim");
  write_dataset(pools.human, dir / "human");
  write_dataset(pools.real, dir / "real");
}

Pools read_pools(const fs::path& dir, const EpisodeFilter& human_filter) {
  for (const char* sub : {"sim", "human", "real"}) {
    if (!fs::exists(dir / sub / kManifestName)) {
      throw IoError("missing dataset " + (dir / sub / kManifestName).string() + " (run `simhum generate` first)");
    }
  }
  Pools p;
  p.sim = read_dataset(dir / "sim");
  p.human = read_dataset(dir / "human", human_filter);
  p.real = read_dataset(dir / "real");
  return p;
}

std::vector<Episode> take_episodes(const std::vector<Episode>& pool, int n, const std::string& what) {
  if (n < 0) throw ConfigError(what + ": episode count must be >= 0");
  if (n > static_cast<int>(pool.size())) {
    throw ConfigError(what + " needs " + std::to_string(n) + " episodes, the pool has " + std::to_string(pool.size()));
  }
  std::vector<Episode> out;
  for (int i = 0; i < n; ++i) {
    out.push_back(pool[static_cast<std::size_t>(static_cast<long>(i) * static_cast<long>(pool.size()) / n)]);
  }
  return out;
}

// ---- configuration -------------------------------------------------------------

namespace {

const char* kDeskPreset = R"(preset = desk
seed = 0

[world]
task = stack_two_discs
image_height = 32
image_width = 32
views = 1
real_noise = 4

[generate]
n_sim = 100
n_human = 100
n_real = 16
real_per_variant = 2
human_capture_hz = 30
human_idle_max = 6
max_distractors = 6
expert_noise = 0.01

[policy]
conv_channels = 8, 16, 16
hidden = 64
heads = 4
encoder_layers = 2
decoder_layers = 2
ff_mult = 4
horizon = 16
state_dropout = 0.2
double_precision = false

[diffusion]
train_steps = 100
inference_steps = 8
clip_x0 = true

[pretrain]
steps = 4000
lr = 1e-3
warmup_steps = 100
batch_size = 32
alpha = 0.5
weight_decay = 1e-6
grad_clip = 1
checkpoint_every = 0

[finetune]
steps = 1500
lr = 5e-4
warmup_steps = 50
batch_size = 32
weight_decay = 1e-6
grad_clip = 1
checkpoint_every = 0

[eval]
battery = ood
trials = 10
execute_steps = 8
budget_factor = 4
batch_size = 64
seeds = 1

[grid]
rows = 4
cols = 4
region = wide
seen_region = seen
jitter = 0.02
trials_per_cell = 10

[sweep]
alphas = 0.1, 0.5, 0.9
)";

const char* kPaperOverrides = R"(preset = paper

[generate]
n_sim = 500
n_human = 500
n_real = 80
real_per_variant = 10

[world]
image_height = 64
image_width = 64

[policy]
conv_channels = 16, 32, 32

[pretrain]
steps = 200000
lr = 1e-4
warmup_steps = 2000
batch_size = 64

[finetune]
steps = 60000
lr = 5e-5
warmup_steps = 2000
batch_size = 64

[sweep]
alphas = 0.1, 0.3, 0.5, 0.7, 0.9
)";

std::string join_ints(const std::array<int, 3>& v) {
  return std::to_string(v[0]) + ", " + std::to_string(v[1]) + ", " + std::to_string(v[2]);
}

void read_train(const KeyValueConfig& kv, const std::string& s, TrainConfig& t) {
  t.steps = kv.get_int(s + ".steps", t.steps);
  t.lr = kv.get_double(s + ".lr", t.lr);
  t.warmup_steps = kv.get_int(s + ".warmup_steps", t.warmup_steps);
  t.batch_size = kv.get_int(s + ".batch_size", t.batch_size);
  t.alpha = kv.get_double(s + ".alpha", t.alpha);
  t.weight_decay = kv.get_double(s + ".weight_decay", t.weight_decay);
  t.grad_clip = kv.get_double(s + ".grad_clip", t.grad_clip);
  t.checkpoint_every = kv.get_int(s + ".checkpoint_every", t.checkpoint_every);
}

void write_train(KeyValueConfig& kv, const std::string& s, const TrainConfig& t, bool with_alpha) {
  kv.set(s + ".steps", std::to_string(t.steps));
  kv.set(s + ".lr", format_double(t.lr));
  kv.set(s + ".warmup_steps", std::to_string(t.warmup_steps));
  kv.set(s + ".batch_size", std::to_string(t.batch_size));
  if (with_alpha) kv.set(s + ".alpha", format_double(t.alpha));
  kv.set(s + ".weight_decay", format_double(t.weight_decay));
  kv.set(s + ".grad_clip", format_double(t.grad_clip));
  kv.set(s + ".checkpoint_every", std::to_string(t.checkpoint_every));
}

}  // namespace

KeyValueConfig preset_config(const std::string& name) {
  auto kv = KeyValueConfig::parse(kDeskPreset, {}, "<desk preset>");
  if (name == "desk") return kv;
  if (name == "paper") {
    kv.merge(KeyValueConfig::parse(kPaperOverrides, {}, "<paper preset>"));
    return kv;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

NoiseSchedule ExperimentConfig::schedule() const { return build_schedule(diffusion_steps, kCosineOffset, inference_steps); }

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& doc) {
  KeyValueConfig kv = preset_config(doc.get_string("preset", "desk"));
  for (const auto& [key, value] : doc.values()) {
    if (!kv.has(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  kv.merge(doc);

  ExperimentConfig c;
  c.preset = kv.get_string("preset");
  const int seed = kv.get_int("seed", 0);
  if (seed < 0) throw ConfigError("seed must be >= 0");
  c.seed = static_cast<std::uint64_t>(seed);

  auto& g = c.generate;
  g.task = kv.get_string("world.task");
  TaskSpec::get(g.task);
  g.render.height = kv.get_int("world.image_height");
  g.render.width = kv.get_int("world.image_width");
  g.render.views = kv.get_int("world.views");
  g.render.noise_sigma = kv.get_double("world.real_noise");
  g.n_sim = kv.get_int("generate.n_sim");
  g.n_human = kv.get_int("generate.n_human");
  g.n_real = kv.get_int("generate.n_real");
  g.real_per_variant = kv.get_int("generate.real_per_variant");
  g.human_capture_hz = kv.get_double("generate.human_capture_hz");
  g.human_idle_max = kv.get_int("generate.human_idle_max");
  g.max_distractors = kv.get_int("generate.max_distractors");
  g.expert_noise = kv.get_double("generate.expert_noise");

  auto& p = c.policy;
  p.views = g.render.views;
  p.image_height = g.render.height;
  p.image_width = g.render.width;
  const auto ch = kv.get_doubles("policy.conv_channels");
  if (ch.size() != 3) throw ConfigError("policy.conv_channels needs exactly 3 entries");
  for (int i = 0; i < 3; ++i) p.conv_channels[static_cast<std::size_t>(i)] = static_cast<int>(ch[static_cast<std::size_t>(i)]);
  p.hidden = kv.get_int("policy.hidden");
  p.heads = kv.get_int("policy.heads");
  p.encoder_layers = kv.get_int("policy.encoder_layers");
  p.decoder_layers = kv.get_int("policy.decoder_layers");
  p.ff_mult = kv.get_int("policy.ff_mult");
  p.horizon = kv.get_int("policy.horizon");
  p.state_dropout = kv.get_double("policy.state_dropout");
  p.double_precision = kv.get_bool("policy.double_precision", false);
  p.check();

  c.diffusion_steps = kv.get_int("diffusion.train_steps");
  c.inference_steps = kv.get_int("diffusion.inference_steps");
  c.sampler.clip_x0 = kv.get_bool("diffusion.clip_x0", true);
  c.schedule();

  c.pretrain = TrainConfig::pretrain_defaults();
  read_train(kv, "pretrain", c.pretrain);
  c.pretrain.check();
  c.finetune = TrainConfig::finetune_defaults();
  read_train(kv, "finetune", c.finetune);
  c.finetune.check();

  c.battery = kv.get_string("eval.battery");
  simhum::battery(c.battery);
  c.trials = kv.get_int("eval.trials");
  if (c.trials <= 0) throw ConfigError("eval.trials must be positive");
  c.rollout.execute_steps = kv.get_int("eval.execute_steps");
  c.rollout.budget_factor = kv.get_double("eval.budget_factor");
  c.rollout.batch_size = kv.get_int("eval.batch_size");
  c.rollout.render = g.render;
  c.rollout.sampler = c.sampler;
  c.seeds = kv.get_int("eval.seeds");
  if (c.seeds <= 0) throw ConfigError("eval.seeds must be positive");

  c.grid.rows = kv.get_int("grid.rows");
  c.grid.cols = kv.get_int("grid.cols");
  c.grid.region = kv.get_string("grid.region");
  c.grid.seen_region = kv.get_string("grid.seen_region");
  c.grid.jitter = kv.get_double("grid.jitter");
  c.grid.trials_per_cell = kv.get_int("grid.trials_per_cell");

  c.alphas = kv.get_doubles("sweep.alphas");
  for (double a : c.alphas)
    if (a < 0.0 || a > 1.0) throw ConfigError("sweep.alphas entries must be in [0, 1]");
  return c;
}

KeyValueConfig ExperimentConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("preset", preset);
  kv.set("seed", std::to_string(seed));
  const auto& g = generate;
  kv.set("world.task", g.task);
  kv.set("world.image_height", std::to_string(g.render.height));
  kv.set("world.image_width", std::to_string(g.render.width));
  kv.set("world.views", std::to_string(g.render.views));
  kv.set("world.real_noise", format_double(g.render.noise_sigma));
  kv.set("generate.n_sim", std::to_string(g.n_sim));
  kv.set("generate.n_human", std::to_string(g.n_human));
  kv.set("generate.n_real", std::to_string(g.n_real));
  kv.set("generate.real_per_variant", std::to_string(g.real_per_variant));
  kv.set("generate.human_capture_hz", format_double(g.human_capture_hz));
  kv.set("generate.human_idle_max", std::to_string(g.human_idle_max));
  kv.set("generate.max_distractors", std::to_string(g.max_distractors));
  kv.set("generate.expert_noise", format_double(g.expert_noise));
  kv.set("policy.conv_channels", join_ints(policy.conv_channels));
  kv.set("policy.hidden", std::to_string(policy.hidden));
  kv.set("policy.heads", std::to_string(policy.heads));
  kv.set("policy.encoder_layers", std::to_string(policy.encoder_layers));
  kv.set("policy.decoder_layers", std::to_string(policy.decoder_layers));
  kv.set("policy.ff_mult", std::to_string(policy.ff_mult));
  kv.set("policy.horizon", std::to_string(policy.horizon));
  kv.set("policy.state_dropout", format_double(policy.state_dropout));
  kv.set("policy.double_precision", policy.double_precision ? "true" : "false");
  kv.set("diffusion.train_steps", std::to_string(diffusion_steps));
  kv.set("diffusion.inference_steps", std::to_string(inference_steps));
  kv.set("diffusion.clip_x0", sampler.clip_x0 ? "true" : "false");
  write_train(kv, "pretrain", pretrain, true);
  write_train(kv, "finetune", finetune, false);
  kv.set("eval.battery", battery);
  kv.set("eval.trials", std::to_string(trials));
  kv.set("eval.execute_steps", std::to_string(rollout.execute_steps));
  kv.set("eval.budget_factor", format_double(rollout.budget_factor));
  kv.set("eval.batch_size", std::to_string(rollout.batch_size));
  kv.set("eval.seeds", std::to_string(seeds));
  kv.set("grid.rows", std::to_string(grid.rows));
  kv.set("grid.cols", std::to_string(grid.cols));
  kv.set("grid.region", grid.region);
  kv.set("grid.seen_region", grid.seen_region);
  kv.set("grid.jitter", format_double(grid.jitter));
  kv.set("grid.trials_per_cell", std::to_string(grid.trials_per_cell));
  std::string alphas_text;
  for (std::size_t i = 0; i < alphas.size(); ++i) alphas_text += (i ? ", " : "") + format_double(alphas[i]);
  kv.set("sweep.alphas", alphas_text);
  return kv;
}

ExperimentConfig resolve_config(const std::optional<std::string>& preset, const std::optional<fs::path>& file,
                                const std::vector<std::string>& overrides) {
  KeyValueConfig kv;
  if (file) kv = KeyValueConfig::load(*file);
  if (preset) kv.set("preset", *preset);
  kv.apply_overrides(overrides);
  return ExperimentConfig::from_kv(kv);
}

void write_resolved_config(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved_config.cfg");
  if (!f) throw IoError("cannot write " + (dir / "resolved_config.cfg").string());
  f << config.to_kv().to_text();
}

// ---- recipes -------------------------------------------------------------------

TrainResult pretrain_for_mode(const Pools& pools, FinetuneMode mode, const ExperimentConfig& c, std::uint64_t seed,
                              std::optional<double> alpha, const fs::path& out) {
  if (mode == FinetuneMode::RealOnly) {
    TrainResult r;
    r.bundle = init_policy(c.policy, seed);
    return r;
  }
  TrainConfig t = c.pretrain;
  t.stage = Stage::Pretrain;
  t.seed = seed;
  t.alpha = alpha.value_or(*pretrain_alpha(mode));
  t.out_dir = out;
  const int n_hum = human_count(t.batch_size, t.alpha);
  const std::vector<Episode> none;
  return pretrain(n_hum < t.batch_size ? pools.sim : none, n_hum > 0 ? pools.human : none, c.policy, t, c.schedule());
}

TrainedPolicy train_mode(const Pools& pools, FinetuneMode mode, const ExperimentConfig& c, std::uint64_t seed,
                         std::optional<double> alpha, const fs::path& out) {
  TrainedPolicy tp;
  tp.mode = mode;
  tp.alpha = mode == FinetuneMode::RealOnly ? std::nullopt : std::optional<double>(alpha.value_or(*pretrain_alpha(mode)));
  auto pre = pretrain_for_mode(pools, mode, c, seed, alpha, out.empty() ? out : out / "pretrain");
  tp.pretrain_log = pre.log;
  TrainConfig t = c.finetune;
  t.stage = Stage::Finetune;
  t.seed = seed;
  t.out_dir = out.empty() ? out : out / "finetune";
  auto ft = finetune(pre.bundle, pools.real, mode, t, c.schedule());
  tp.finetune_log = ft.log;
  tp.bundle = std::move(ft.bundle);
  if (mode != FinetuneMode::RealOnly) tp.pretrained = std::move(pre.bundle);
  return tp;
}

EvalReport evaluate_policy(const PolicyBundle& bundle, const ExperimentConfig& c, const std::vector<Scenario>& scenarios,
                           std::uint64_t seed, const std::string& label) {
  DiffusionPolicy policy(bundle, c.schedule(), c.sampler, seed ^ 0x6576616cULL);
  auto trials = run_trials(policy, c.generate.task, scenarios, c.trials, seed, c.rollout, Catalog::builtin());
  return make_report(c.generate.task, label, std::move(trials));
}

EvalReport grid_evaluate_policy(const PolicyBundle& bundle, const ExperimentConfig& c, std::uint64_t seed,
                                const std::string& label) {
  DiffusionPolicy policy(bundle, c.schedule(), c.sampler, seed ^ 0x67726964ULL);
  auto r = grid_eval(policy, c.generate.task, c.grid, seed, c.rollout, Catalog::builtin());
  r.label = label;
  return r;
}

// ---- analyses ------------------------------------------------------------------

Scenario ablation_scenario(const std::string& factor) {
  Scenario s;
  s.ood = true;
  s.id = "ood_" + factor;
  if (factor == "obj") s.factors.obj = "obj_novel";
  else if (factor == "dist") {
    s.factors.dist = "clutter_novel";
    s.dist_min = 8;
    s.dist_max = 10;
  } else if (factor == "light") s.factors.light = "dusk";
  else if (factor == "bg") s.factors.bg = "wrinkle_dark";
  else if (factor == "init") s.factors.init = "wide";
  else throw ConfigError("unknown factor '" + factor + "' (expected obj, dist, light, bg or init)");
  return s;
}

AblationResult factor_ablation(const Pools& pools, const std::string& factor, const ExperimentConfig& c,
                               std::uint64_t seed) {
  const auto scenario = ablation_scenario(factor);
  const auto keep = base_only_filter(factor);
  Pools filtered = pools;
  filtered.human.clear();
  for (const auto& ep : pools.human)
    if (keep(ep.domain, ep.task, ep.factors)) filtered.human.push_back(ep);
  if (filtered.human.empty()) throw ConfigError("holding out '" + factor + "' leaves no HUMAN episodes");

  AblationResult r;
  r.factor = factor;
  const auto full = train_mode(pools, FinetuneMode::SimHum, c, seed);
  r.full = evaluate_policy(full.bundle, c, {scenario}, seed, "full");
  const auto without = train_mode(filtered, FinetuneMode::SimHum, c, seed);
  r.without = evaluate_policy(without.bundle, c, {scenario}, seed, "without_" + factor);
  return r;
}

std::vector<BudgetRow> budget_rows(double scale) {
  if (!(scale > 0.0)) throw ConfigError("budget scale must be positive");
  auto n = [&](int paper) { return static_cast<int>(std::lround(paper * scale)); };
  auto row = [&](FinetuneMode m, int r, int s, int h) {
    BudgetRow b;
    b.mode = m;
    b.n_real = n(r);
    b.n_sim = n(s);
    b.n_hum = n(h);
    b.label = to_string(m) + ":" + std::to_string(b.n_real) + "R";
    if (b.n_sim > 0) b.label += "+" + std::to_string(b.n_sim) + "S";
    if (b.n_hum > 0) b.label += "+" + std::to_string(b.n_hum) + "H";
    return b;
  };
  return {row(FinetuneMode::RealOnly, 40, 0, 0),      row(FinetuneMode::RealOnly, 80, 0, 0),
          row(FinetuneMode::RealOnly, 160, 0, 0),     row(FinetuneMode::HumReal, 20, 0, 100),
          row(FinetuneMode::HumReal, 40, 0, 200),     row(FinetuneMode::HumReal, 80, 0, 400),
          row(FinetuneMode::SimReal, 20, 100, 0),     row(FinetuneMode::SimReal, 40, 200, 0),
          row(FinetuneMode::SimReal, 80, 400, 0),     row(FinetuneMode::SimHum, 20, 100, 100),
          row(FinetuneMode::SimHum, 40, 200, 200),    row(FinetuneMode::SimHum, 80, 400, 400)};
}

std::vector<SweepRow> budget_sweep(const Pools& pools, const std::vector<BudgetRow>& rows, const ExperimentConfig& c,
                                   const std::vector<std::uint64_t>& seeds) {
  std::vector<Pools> subsets;
  for (const auto& r : rows) {
    Pools s;
    s.real = take_episodes(pools.real, r.n_real, "budget row " + r.label + " (REAL)");
    s.sim = take_episodes(pools.sim, r.n_sim, "budget row " + r.label + " (SIM)");
    s.human = take_episodes(pools.human, r.n_hum, "budget row " + r.label + " (HUMAN)");
    subsets.push_back(std::move(s));
  }
  std::vector<SweepRow> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (auto seed : seeds) {
      const auto tp = train_mode(subsets[i], rows[i].mode, c, seed);
      SweepRow row;
      row.label = rows[i].label;
      row.alpha = tp.alpha.value_or(0.0);
      row.seed = seed;
      row.report = evaluate_policy(tp.bundle, c, ood_battery(), seed, rows[i].label);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::vector<SweepRow> alpha_sweep(const Pools& pools, const std::vector<double>& alphas, const ExperimentConfig& c,
                                  const std::vector<std::uint64_t>& seeds) {
  std::vector<SweepRow> out;
  for (double a : alphas) {
    if (a < 0.0 || a > 1.0) throw ConfigError("alpha " + format_double(a) + " outside [0, 1]");
    for (auto seed : seeds) {
      const auto tp = train_mode(pools, FinetuneMode::SimHum, c, seed, a);
      SweepRow row;
      row.label = "alpha_" + format_double(a);
      row.alpha = a;
      row.seed = seed;
      row.report = evaluate_policy(tp.bundle, c, ood_battery(), seed, row.label);
      out.push_back(std::move(row));
    }
  }
  return out;
}

std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "label\talpha\tseed\tn\tsr\tsr_se\tpr\tpr_se\n";
  for (const auto& r : rows) {
    const auto& a = r.report.overall;
    os << r.label << '\t' << format_double(r.alpha) << '\t' << r.seed << '\t' << a.n_effective << '\t'
       << format_double(a.sr) << '\t' << format_double(a.sr_se) << '\t' << format_double(a.pr) << '\t'
       << format_double(a.pr_se) << '\n';
  }
  return os.str();
}

}  // namespace simhum
