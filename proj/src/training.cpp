#include "simhum/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "simhum/errors.hpp"
#include "simhum/text.hpp"

namespace simhum {

namespace fs = std::filesystem;

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.stage = Stage::Finetune;
  c.steps = 60000;
  c.lr = 5e-5;
  return c;
}

void TrainConfig::check() const {
  if (steps <= 0) throw ConfigError("train.steps must be positive, got " + std::to_string(steps));
  if (warmup_steps < 0 || warmup_steps > steps) {
    throw ConfigError("train.warmup_steps must be in [0, steps], got " + std::to_string(warmup_steps));
  }
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (batch_size <= 0) throw ConfigError("train.batch_size must be positive");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("train.alpha must be in [0, 1], got " + format_double(alpha));
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be positive");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be non-negative");
}

double learning_rate(const TrainConfig& c, int step) {
  if (step <= c.warmup_steps) return c.lr * static_cast<double>(step) / c.warmup_steps;
  const int decay = c.steps - c.warmup_steps;
  if (decay <= 0) return c.lr;
  const double progress = static_cast<double>(step - c.warmup_steps) / decay;
  return c.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string log_header() { return "step\tlr\tloss_total\tloss_sim\tloss_hum\tgrad_norm\tclipped"; }

std::string format_log_row(const LogRow& r) {
  auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string("-"); };
  std::ostringstream os;
  os << r.step << '\t' << format_double(r.lr) << '\t' << format_double(r.loss_total) << '\t' << opt(r.loss_sim)
     << '\t' << opt(r.loss_hum) << '\t' << format_double(r.grad_norm) << '\t' << (r.clipped ? 1 : 0);
  return os.str();
}

void write_log(const std::vector<LogRow>& log, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log '" + path.string() + "'");
  out << log_header() << '\n';
  for (const auto& r : log) out << format_log_row(r) << '\n';
}

NoiseDraw draw_noise(std::int64_t B, std::int64_t H, std::int64_t d, const NoiseSchedule& sch, std::mt19937_64& rng,
                     torch::ScalarType dtype) {
  std::uniform_int_distribution<int> ut(0, sch.train_steps - 1);
  std::vector<std::int64_t> ts(static_cast<std::size_t>(B));
  std::vector<torch::Tensor> eps;
  for (std::int64_t b = 0; b < B; ++b) {
    ts[static_cast<std::size_t>(b)] = ut(rng);
    eps.push_back(normal_tensor({H, d}, rng, dtype));
  }
  return {torch::stack(eps), torch::tensor(ts, torch::kInt64)};
}

torch::Tensor per_sample_loss(const PolicyBundle& bundle, const BatchTensors& batch, const NoiseDraw& noise,
                              const NoiseSchedule& sch) {
  const auto z = add_noise(batch.actions, noise.t, noise.epsilon, sch);
  const auto eps_hat = predict_noise(bundle, batch, z, noise.t);
  return (noise.epsilon - eps_hat).pow(2).mean({1, 2});
}

torch::Tensor loss_eq3(const PolicyBundle& bundle, const BatchTensors& batch, const NoiseDraw& noise,
                       const NoiseSchedule& sch) {
  return per_sample_loss(bundle, batch, noise, sch).mean();
}

torch::Tensor loss_eq3(const PolicyBundle& bundle, const std::vector<TrainingSample>& samples,
                       const NoiseSchedule& sch, std::mt19937_64& rng) {
  const auto batch = make_batch(bundle, samples);
  const auto noise = draw_noise(batch.actions.size(0), batch.actions.size(1), batch.actions.size(2), sch, rng,
                                batch.actions.scalar_type());
  return loss_eq3(bundle, batch, noise, sch);
}

MixedLoss loss_total(const PolicyBundle& bundle, const std::vector<TrainingSample>& samples, double alpha,
                     const NoiseSchedule& sch, std::mt19937_64& rng) {
  const int B = static_cast<int>(samples.size());
  std::vector<const TrainingSample*> sim, hum;
  std::vector<torch::Tensor> sim_eps, hum_eps;
  std::vector<std::int64_t> sim_t, hum_t;
  const auto dtype = bundle.config.double_precision ? torch::kFloat64 : torch::kFloat32;
  std::uniform_int_distribution<int> ut(0, sch.train_steps - 1);
  for (const auto& s : samples) {
    if (s.domain == DomainTag::Real) throw RoutingError("REAL samples do not belong in a pretraining batch");
    const bool human = s.domain == DomainTag::Human;
    (human ? hum : sim).push_back(&s);
    (human ? hum_t : sim_t).push_back(ut(rng));
    (human ? hum_eps : sim_eps).push_back(normal_tensor({s.action_chunk.rows(), s.action_chunk.cols()}, rng, dtype));
  }
  const int expected = human_count(B, alpha);
  if (static_cast<int>(hum.size()) != expected) {
    throw ConfigError("batch holds " + std::to_string(hum.size()) + " HUMAN samples, alpha = " + format_double(alpha) +
                      " with B = " + std::to_string(B) + " requires " + std::to_string(expected));
  }
  MixedLoss out;
  out.n_sim = static_cast<int>(sim.size());
  out.n_hum = static_cast<int>(hum.size());
  std::vector<torch::Tensor> parts;
  if (!sim.empty()) {
    out.per_sample_sim =
        per_sample_loss(bundle, make_batch(bundle, sim), {torch::stack(sim_eps), torch::tensor(sim_t)}, sch);
    out.loss_sim = out.per_sample_sim.mean().item<double>();
    parts.push_back(out.per_sample_sim);
  }
  if (!hum.empty()) {
    out.per_sample_hum =
        per_sample_loss(bundle, make_batch(bundle, hum), {torch::stack(hum_eps), torch::tensor(hum_t)}, sch);
    out.loss_hum = out.per_sample_hum.mean().item<double>();
    parts.push_back(out.per_sample_hum);
  }
  out.total = torch::cat(parts).mean();
  return out;
}

std::vector<torch::Tensor> parameters_of(const PolicyBundle& bundle, const std::set<std::string>& modules) {
  std::vector<torch::Tensor> out;
  for (const auto& [name, p] : bundle.named_parameters())
    if (modules.contains(module_of(name))) out.push_back(p);
  return out;
}

std::set<std::string> pretrain_modules(const PolicyConfig& c, double alpha, int B) {
  const int n_hum = human_count(B, alpha);
  std::set<std::string> m;
  if (n_hum > 0) m.merge(routed_modules(c, DomainTag::Human));
  if (n_hum < B) m.merge(routed_modules(c, DomainTag::Sim));
  return m;
}

namespace {

using BatchLoss = std::function<MixedLoss(int step, std::mt19937_64& rng)>;

std::vector<LogRow> optimize(PolicyBundle& bundle, const std::set<std::string>& modules, const TrainConfig& cfg,
                             const BatchLoss& batch_loss, const StepHook& hook, std::mt19937_64& rng) {
  auto params = parameters_of(bundle, modules);
  if (params.empty()) throw ConfigError("no parameters registered for this stage");
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(cfg.lr)
                                      .betas({cfg.beta1, cfg.beta2})
                                      .weight_decay(cfg.weight_decay));
  if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);
  std::vector<LogRow> log;
  int above = 0;
  bundle.net->train();
  for (int step = 1; step <= cfg.steps; ++step) {
    const double lr = learning_rate(cfg, step);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(g.options()).lr(lr);
    opt.zero_grad();
    MixedLoss loss = batch_loss(step, rng);
    const double value = loss.total.item<double>();
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step << " (lr " << format_double(lr) << ", sim "
         << (loss.loss_sim ? format_double(*loss.loss_sim) : "-") << ", human "
         << (loss.loss_hum ? format_double(*loss.loss_hum) : "-") << ")";
      if (!cfg.out_dir.empty()) write_log(log, cfg.out_dir / "train_log.tsv");
      throw TrainingError(os.str());
    }
    loss.total.backward();
    if (hook) hook(step, bundle);
    const double norm = torch::nn::utils::clip_grad_norm_(params, cfg.grad_clip);
    opt.step();

    log.push_back({step, lr, value, loss.loss_sim, loss.loss_hum, norm, norm > cfg.grad_clip});
    above = value > cfg.divergence_loss ? above + 1 : 0;
    if (above >= cfg.divergence_patience) {
      if (!cfg.out_dir.empty()) write_log(log, cfg.out_dir / "train_log.tsv");
      throw TrainingError("training diverged: loss above " + format_double(cfg.divergence_loss) + " for " +
                          std::to_string(cfg.divergence_patience) + " consecutive steps (step " +
                          std::to_string(step) + ")");
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && !cfg.out_dir.empty()) {
      fs::create_directories(cfg.out_dir / "checkpoints");
      bundle.net->eval();
      save_policy(bundle, cfg.out_dir / "checkpoints" / ("step_" + std::to_string(step) + ".shpt"));
      bundle.net->train();
    }
  }
  bundle.net->eval();
  if (!cfg.out_dir.empty()) {
    write_log(log, cfg.out_dir / "train_log.tsv");
    save_policy(bundle, cfg.out_dir / kPolicyFile);
  }
  return log;
}

void check_dims(const std::vector<Episode>& eps, int state_dim, int action_dim, const char* what) {
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (eps[i].states.cols() != state_dim || eps[i].actions.cols() != action_dim) {
      throw ConfigError(std::string(what) + " episode " + std::to_string(i) + " has dims (" +
                        std::to_string(eps[i].states.cols()) + ", " + std::to_string(eps[i].actions.cols()) +
                        "), the policy expects (" + std::to_string(state_dim) + ", " + std::to_string(action_dim) + ")");
    }
  }
}

}  // namespace

TrainResult pretrain(const std::vector<Episode>& sim, const std::vector<Episode>& human, const PolicyConfig& pc,
                     const TrainConfig& cfg, const NoiseSchedule& sch, const StepHook& hook) {
  cfg.check();
  pc.check();
  const int n_hum = human_count(cfg.batch_size, cfg.alpha);
  if (n_hum > 0 && human.empty()) throw ConfigError("pretraining with alpha > 0 needs HUMAN episodes");
  if (n_hum < cfg.batch_size && sim.empty()) throw ConfigError("pretraining with alpha < 1 needs SIM episodes");
  check_dims(sim, pc.robot_state_dim, pc.robot_action_dim, "SIM");
  check_dims(human, pc.human_state_dim, pc.human_action_dim, "HUMAN");

  torch::manual_seed(cfg.seed);
  TrainResult r;
  r.bundle = init_policy(pc, cfg.seed);
  if (!sim.empty()) r.bundle.norm.fit(EmbodimentBranch::Robot, sim);
  if (!human.empty()) r.bundle.norm.fit(EmbodimentBranch::Human, human);
  r.registered_modules = pretrain_modules(pc, cfg.alpha, cfg.batch_size);

  const SamplePool sim_pool = sim.empty() ? SamplePool() : SamplePool(sim, pc.horizon);
  const SamplePool hum_pool = human.empty() ? SamplePool() : SamplePool(human, pc.horizon);
  std::mt19937_64 rng(cfg.seed ^ 0x7072657472ULL);
  auto batch_loss = [&](int, std::mt19937_64& g) {
    const auto batch = compose_batch(sim_pool, hum_pool, cfg.batch_size, cfg.alpha, g);
    return loss_total(r.bundle, batch, cfg.alpha, sch, g);
  };
  r.log = optimize(r.bundle, r.registered_modules, cfg, batch_loss, hook, rng);
  return r;
}

std::string to_string(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::SimHum: return "simhum";
    case FinetuneMode::SimReal: return "sim-real";
    case FinetuneMode::HumReal: return "hum-real";
    case FinetuneMode::RealOnly: return "real-only";
  }
  return "?";
}

FinetuneMode parse_finetune_mode(const std::string& s) {
  for (auto m : {FinetuneMode::SimHum, FinetuneMode::SimReal, FinetuneMode::HumReal, FinetuneMode::RealOnly})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + s + "' (expected simhum, sim-real, hum-real or real-only)");
}

std::optional<double> pretrain_alpha(FinetuneMode m) {
  switch (m) {
    case FinetuneMode::SimHum: return 0.5;
    case FinetuneMode::SimReal: return 0.0;
    case FinetuneMode::HumReal: return 1.0;
    case FinetuneMode::RealOnly: return std::nullopt;
  }
  return std::nullopt;
}

std::uint64_t reinit_seed(std::uint64_t finetune_seed) { return finetune_seed * 0x9e3779b97f4a7c15ULL + 0x5265696eULL; }

TrainResult finetune(const PolicyBundle& pretrained, const std::vector<Episode>& real, FinetuneMode mode,
                     const TrainConfig& cfg, const NoiseSchedule& sch, const StepHook& hook) {
  cfg.check();
  if (real.empty()) throw ConfigError("fine-tuning needs REAL episodes");
  for (std::size_t i = 0; i < real.size(); ++i) {
    if (real[i].domain != DomainTag::Real) throw ConfigError("fine-tuning episode " + std::to_string(i) + " is not REAL");
  }
  check_dims(real, pretrained.config.robot_state_dim, pretrained.config.robot_action_dim, "REAL");

  torch::manual_seed(cfg.seed);
  TrainResult r;
  r.bundle = recombine_for_real(pretrained);
  if (mode == FinetuneMode::HumReal) reinitialize_modules(r.bundle, kRobotBranch, reinit_seed(cfg.seed));
  // Robot statistics come from the pretraining pool when it had robot data.
  if (!r.bundle.norm.has(EmbodimentBranch::Robot)) r.bundle.norm.fit(EmbodimentBranch::Robot, real);
  for (const auto& p : r.bundle.net->named_parameters()) r.registered_modules.insert(module_of(p.key()));

  const SamplePool pool(real, r.bundle.config.horizon);
  std::mt19937_64 rng(cfg.seed ^ 0x66696e65ULL);
  const auto dtype = r.bundle.config.double_precision ? torch::kFloat64 : torch::kFloat32;
  auto batch_loss = [&](int, std::mt19937_64& g) {
    std::vector<TrainingSample> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(pool.sample(g));
    const auto bt = make_batch(r.bundle, batch);
    const auto noise = draw_noise(bt.actions.size(0), bt.actions.size(1), bt.actions.size(2), sch, g, dtype);
    MixedLoss m;
    m.total = loss_eq3(r.bundle, bt, noise, sch);
    return m;
  };
  r.log = optimize(r.bundle, r.registered_modules, cfg, batch_loss, hook, rng);
  return r;
}

}  // namespace simhum
