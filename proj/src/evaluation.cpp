#include "simhum/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "simhum/errors.hpp"

namespace simhum {

namespace {

void check_scores(const std::vector<int>& scores, int s_max) {
  if (scores.empty()) throw ArgumentError("score list is empty");
  if (s_max <= 0) throw ArgumentError("maximum score must be positive");
  for (int s : scores) {
    if (s < 0 || s > s_max) {
      throw ArgumentError("score " + std::to_string(s) + " outside [0, " + std::to_string(s_max) + "]");
    }
  }
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derived per-trial streams so that trials are independent of batching.
std::uint64_t trial_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return splitmix(splitmix(seed ^ splitmix(a + 1)) ^ splitmix(b + 0x1000));
}

int expert_length(const TaskSpec& task, const Scene& scene, const Embodiment& body, DomainTag domain) {
  ExpertOptions opt;
  opt.domain = domain;
  opt.noise_sigma = 0.0;
  opt.render.height = 4;
  opt.render.width = 4;
  std::mt19937_64 rng(0);
  return scripted_expert(task, scene, body, opt, rng).episode.length();
}

}  // namespace

// ---- metrics -------------------------------------------------------------------

double success_rate(const std::vector<int>& scores, int s_max) {
  check_scores(scores, s_max);
  const auto hits = std::count(scores.begin(), scores.end(), s_max);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(scores.size());
}

double progress_rate(const std::vector<int>& scores, int s_max) {
  check_scores(scores, s_max);
  const double total = std::accumulate(scores.begin(), scores.end(), 0.0);
  return 100.0 * total / (static_cast<double>(scores.size()) * s_max);
}

double success_rate_se(const std::vector<int>& scores, int s_max) {
  const double p = success_rate(scores, s_max) / 100.0;
  return 100.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(scores.size()));
}

double progress_rate_se(const std::vector<int>& scores, int s_max) {
  check_scores(scores, s_max);
  const auto n = static_cast<double>(scores.size());
  if (scores.size() < 2) return 0.0;
  const double mean = progress_rate(scores, s_max) / 100.0;
  double ss = 0.0;
  for (int s : scores) {
    const double d = static_cast<double>(s) / s_max - mean;
    ss += d * d;
  }
  return 100.0 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
}

// ---- scenarios -----------------------------------------------------------------

std::vector<Scenario> id_battery() {
  std::vector<Scenario> out;
  out.push_back({"base", FactorConfig{}, 0, 0, false});
  FactorConfig clutter;
  clutter.dist = "clutter_a";
  out.push_back({"id_clutter", clutter, 3, 5, false});
  FactorConfig light;
  light.light = "dim";
  out.push_back({"id_light", light, 0, 0, false});
  FactorConfig bg;
  bg.bg = "wood";
  out.push_back({"id_bg", bg, 0, 0, false});
  return out;
}

std::vector<Scenario> ood_battery() {
  std::vector<Scenario> out;
  FactorConfig a;
  a.bg = "wrinkle_dark";
  a.dist = "clutter_novel";
  out.push_back({"ood_a", a, 8, 10, true});
  FactorConfig b;
  b.obj = "obj_novel";
  b.bg = "wrinkle_color";
  b.dist = "clutter_novel";
  out.push_back({"ood_b", b, 8, 10, true});
  return out;
}

std::vector<Scenario> battery(const std::string& name) {
  if (name == "id") return id_battery();
  if (name == "ood") return ood_battery();
  throw ConfigError("unknown battery '" + name + "' (expected id or ood)");
}

// ---- policies ------------------------------------------------------------------

DiffusionPolicy::DiffusionPolicy(const PolicyBundle& bundle, const NoiseSchedule& schedule, SamplerOptions sampler,
                                 std::uint64_t seed, DomainTag domain)
    : bundle_(bundle), schedule_(schedule), sampler_(sampler), rng_(seed), domain_(domain) {
  if (!bundle_.net) throw ArgumentError("diffusion policy needs a constructed bundle");
  bundle_.net.ptr()->eval();
}

std::vector<Matrix> DiffusionPolicy::plan(const std::vector<PlanQuery>& queries) {
  if (queries.empty()) return {};
  const auto& c = bundle_.config;
  const auto dt = c.double_precision ? torch::kFloat64 : torch::kFloat32;
  const EmbodimentBranch e = embodiment_of(domain_);
  const auto& sn = bundle_.norm.state(e);
  const auto& an = bundle_.norm.action(e);
  const auto B = static_cast<std::int64_t>(queries.size());
  const auto d_s = sn.lo.size();
  const auto d_a = an.lo.size();

  std::vector<const Frame*> frames;
  std::vector<double> st(static_cast<std::size_t>(B * d_s));
  for (std::int64_t b = 0; b < B; ++b) {
    const auto& q = queries[static_cast<std::size_t>(b)];
    frames.push_back(q.frame);
    const Eigen::VectorXd s = sn.normalize(q.world->body_state);
    std::copy(s.data(), s.data() + d_s, st.begin() + b * d_s);
  }
  BatchTensors batch;
  batch.images = frames_to_tensor(frames, dt);
  batch.state = torch::from_blob(st.data(), {B, d_s}, torch::kFloat64).to(dt).clone();
  batch.domain = domain_;

  torch::NoGradGuard guard;
  const Denoiser denoiser = [&](const torch::Tensor& z, const torch::Tensor& t) {
    return predict_noise(bundle_, batch, z, t);
  };
  const auto x = sample(denoiser, {B, c.horizon, d_a}, schedule_, sampler_, rng_, dt).to(torch::kFloat64).contiguous();
  const double* px = x.data_ptr<double>();

  std::vector<Matrix> out;
  for (std::int64_t b = 0; b < B; ++b) {
    Matrix chunk(c.horizon, d_a);
    for (int h = 0; h < c.horizon; ++h) {
      Eigen::VectorXd y(d_a);
      for (Eigen::Index j = 0; j < d_a; ++j) y(j) = px[(b * c.horizon + h) * d_a + j];
      chunk.row(h) = an.denormalize(y).transpose();
    }
    out.push_back(std::move(chunk));
  }
  return out;
}

void ExpertReplayPolicy::begin(const std::vector<Scene>& scenes, const Embodiment& body) {
  const auto task = TaskSpec::get(task_);
  actions_.clear();
  for (const auto& s : scenes) {
    ExpertOptions opt;
    opt.domain = body.kind == EmbodimentKind::Gripper ? DomainTag::Real : DomainTag::Human;
    opt.noise_sigma = 0.0;
    opt.render.height = 4;
    opt.render.width = 4;
    std::mt19937_64 rng(0);
    actions_.push_back(scripted_expert(task, s, body, opt, rng).episode.actions);
  }
}

std::vector<Matrix> ExpertReplayPolicy::plan(const std::vector<PlanQuery>& queries) {
  std::vector<Matrix> out;
  for (const auto& q : queries) {
    const Matrix& a = actions_.at(static_cast<std::size_t>(q.trial));
    const Eigen::Index n = a.rows();
    const Eigen::Index from = std::min<Eigen::Index>(q.step, n - 1);
    const Eigen::Index rows = std::max<Eigen::Index>(1, std::min<Eigen::Index>(16, n - from));
    out.push_back(a.middleRows(from, rows));
  }
  return out;
}

std::vector<Matrix> IdlePolicy::plan(const std::vector<PlanQuery>& queries) {
  std::vector<Matrix> out;
  for (const auto& q : queries) out.push_back(Matrix::Zero(16, q.world->body_state.size()));
  return out;
}

// ---- rollouts ------------------------------------------------------------------

namespace {

struct Live {
  std::size_t spec = 0;
  WorldState world;
  std::vector<WorldState> trace;
  std::mt19937_64 render_rng;
  int budget = 0;
  int steps = 0;
  int milestone = 0;
  bool done = false;
};

void run_batch(RolloutPolicy& policy, const TaskSpec& task, const std::vector<TrialSpec>& specs,
               std::vector<std::size_t> idx, const RolloutConfig& cfg, const Catalog& catalog,
               std::vector<TrialResult>& results) {
  const Embodiment body = Embodiment::for_domain(cfg.domain);
  std::vector<Live> live;
  for (std::size_t i : idx) {
    const auto& spec = specs[i];
    TrialResult& r = results[i];
    try {
      std::mt19937_64 rng(spec.seed);
      Scene scene;
      if (spec.left_target) {
        const Eigen::Vector2d right = spec.right_target.value_or(Eigen::Vector2d(-spec.left_target->x(), spec.left_target->y()));
        scene = generate_scene_at(task, spec.factors, catalog, *spec.left_target, right, rng);
      } else {
        scene = generate_scene(task, spec.factors, catalog, rng);
      }
      Live l;
      l.spec = i;
      l.world = WorldState{scene, initial_state(body)};
      l.budget = static_cast<int>(std::ceil(cfg.budget_factor * expert_length(task, scene, body, cfg.domain)));
      l.render_rng.seed(splitmix(spec.seed ^ 0xa5a5a5a5ULL));
      live.push_back(std::move(l));
    } catch (const GenerationError& e) {
      r.valid = false;
      r.invalid_reason = std::string("scene generation: ") + e.what();
    }
  }
  std::vector<Scene> scenes;
  for (const auto& l : live) scenes.push_back(l.world.scene);
  policy.begin(scenes, body);

  auto advance_milestones = [&](Live& l) {
    while (l.milestone < task.max_score() &&
           task.milestones[static_cast<std::size_t>(l.milestone)](l.world.scene, body, l.world.body_state)) {
      ++l.milestone;
    }
    if (l.milestone == task.max_score()) l.done = true;
  };
  for (auto& l : live) {
    l.trace.push_back(l.world);
    advance_milestones(l);
  }

  while (true) {
    std::vector<std::size_t> active;
    for (std::size_t k = 0; k < live.size(); ++k)
      if (!live[k].done) active.push_back(k);
    if (active.empty()) break;

    std::vector<Frame> frames;
    frames.reserve(active.size());
    for (std::size_t k : active) {
      RenderOptions ro = cfg.render;
      ro.seed = live[k].render_rng();
      frames.push_back(render_frame(live[k].world.scene, body, live[k].world.body_state, cfg.domain, ro));
    }
    std::vector<PlanQuery> queries;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const Live& l = live[active[j]];
      queries.push_back({static_cast<int>(active[j]), l.steps, &l.world, &frames[j]});
    }
    const auto chunks = policy.plan(queries);
    if (chunks.size() != active.size()) throw RoutingError("policy returned the wrong number of action chunks");

    for (std::size_t j = 0; j < active.size(); ++j) {
      Live& l = live[active[j]];
      const Matrix& chunk = chunks[j];
      const int n = std::min<int>(cfg.execute_steps, static_cast<int>(chunk.rows()));
      try {
        for (int h = 0; h < n && !l.done; ++h) {
          l.world = step(body, l.world.body_state, chunk.row(h).transpose(), l.world.scene);
          l.trace.push_back(l.world);
          ++l.steps;
          advance_milestones(l);
          if (l.steps >= l.budget) l.done = true;
        }
      } catch (const StepError& e) {
        results[l.spec].valid = false;
        results[l.spec].invalid_reason = std::string("environment step: ") + e.what();
        l.done = true;
      }
    }
  }

  for (auto& l : live) {
    TrialResult& r = results[l.spec];
    if (!r.valid) continue;
    r.score = score_rollout(l.trace, task, body);
    r.length = static_cast<int>(l.trace.size());
  }
}

}  // namespace

std::vector<TrialResult> run_specs(RolloutPolicy& policy, const std::string& task_id, const std::vector<TrialSpec>& specs,
                                   const RolloutConfig& config, const Catalog& catalog) {
  if (config.execute_steps <= 0) throw ConfigError("eval.execute_steps must be positive");
  if (config.budget_factor <= 0.0) throw ConfigError("eval.budget_factor must be positive");
  if (config.batch_size <= 0) throw ConfigError("eval.batch_size must be positive");
  const auto task = TaskSpec::get(task_id);
  std::vector<TrialResult> results(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    catalog.check(specs[i].factors);
    results[i].task = task_id;
    results[i].scenario = specs[i].scenario;
    results[i].seed = specs[i].seed;
    results[i].max_score = task.max_score();
    results[i].cell = specs[i].cell;
  }
  for (std::size_t from = 0; from < specs.size(); from += static_cast<std::size_t>(config.batch_size)) {
    std::vector<std::size_t> idx;
    for (std::size_t i = from; i < std::min(specs.size(), from + static_cast<std::size_t>(config.batch_size)); ++i) {
      idx.push_back(i);
    }
    run_batch(policy, task, specs, idx, config, catalog, results);
  }
  return results;
}

std::vector<TrialResult> run_trials(RolloutPolicy& policy, const std::string& task,
                                    const std::vector<Scenario>& scenarios, int n_trials, std::uint64_t seed,
                                    const RolloutConfig& config, const Catalog& catalog) {
  if (n_trials <= 0) throw ConfigError("eval.trials must be positive");
  if (scenarios.empty()) throw ConfigError("no evaluation scenarios");
  std::vector<TrialSpec> specs;
  for (std::size_t s = 0; s < scenarios.size(); ++s) {
    const auto& sc = scenarios[s];
    if (sc.dist_min < 0 || sc.dist_max < sc.dist_min) throw ConfigError("scenario '" + sc.id + "' has a bad distractor range");
    for (int i = 0; i < n_trials; ++i) {
      TrialSpec spec;
      spec.scenario = sc.id;
      spec.seed = trial_seed(seed, s, static_cast<std::uint64_t>(i));
      spec.factors = sc.factors;
      std::mt19937_64 r(splitmix(spec.seed));
      spec.factors.dist_count = std::uniform_int_distribution<int>(sc.dist_min, sc.dist_max)(r);
      specs.push_back(spec);
    }
  }
  return run_specs(policy, task, specs, config, catalog);
}

// ---- reports -------------------------------------------------------------------

Aggregate aggregate(const std::vector<TrialResult>& trials) {
  Aggregate a;
  a.n_raw = static_cast<int>(trials.size());
  std::vector<int> scores;
  int s_max = 0;
  for (const auto& t : trials) {
    if (!t.valid) continue;
    if (s_max != 0 && t.max_score != s_max) throw ArgumentError("trials disagree on the maximum score");
    s_max = t.max_score;
    scores.push_back(t.score);
  }
  a.n_effective = static_cast<int>(scores.size());
  if (scores.empty()) return a;
  a.sr = success_rate(scores, s_max);
  a.pr = progress_rate(scores, s_max);
  a.sr_se = success_rate_se(scores, s_max);
  a.pr_se = progress_rate_se(scores, s_max);
  return a;
}

double GridReport::seen_mean_pr() const {
  double s = 0.0;
  int n = 0;
  for (const auto& c : cells)
    if (c.seen && c.n > 0) s += c.mean_pr, ++n;
  return n > 0 ? s / n : 0.0;
}

double GridReport::unseen_mean_pr() const {
  double s = 0.0;
  int n = 0;
  for (const auto& c : cells)
    if (!c.seen && c.n > 0) s += c.mean_pr, ++n;
  return n > 0 ? s / n : 0.0;
}

EvalReport make_report(const std::string& task, const std::string& label, std::vector<TrialResult> trials) {
  EvalReport r;
  r.task = task;
  r.label = label;
  std::vector<std::string> order;
  for (const auto& t : trials)
    if (std::find(order.begin(), order.end(), t.scenario) == order.end()) order.push_back(t.scenario);
  for (const auto& id : order) {
    std::vector<TrialResult> sub;
    for (const auto& t : trials)
      if (t.scenario == id) sub.push_back(t);
    r.per_scenario.emplace_back(id, aggregate(sub));
  }
  r.overall = aggregate(trials);
  r.trials = std::move(trials);
  return r;
}

namespace {

nlohmann::json agg_json(const Aggregate& a) {
  return {{"n_raw", a.n_raw}, {"n_effective", a.n_effective}, {"sr", a.sr},
          {"pr", a.pr},       {"sr_se", a.sr_se},             {"pr_se", a.pr_se}};
}

Aggregate agg_from(const nlohmann::json& j) {
  Aggregate a;
  a.n_raw = j.at("n_raw").get<int>();
  a.n_effective = j.at("n_effective").get<int>();
  a.sr = j.at("sr").get<double>();
  a.pr = j.at("pr").get<double>();
  a.sr_se = j.at("sr_se").get<double>();
  a.pr_se = j.at("pr_se").get<double>();
  return a;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["task"] = task;
  j["label"] = label;
  j["overall"] = agg_json(overall);
  j["per_scenario"] = nlohmann::json::array();
  for (const auto& [id, a] : per_scenario) {
    auto e = agg_json(a);
    e["scenario"] = id;
    j["per_scenario"].push_back(e);
  }
  j["trials"] = nlohmann::json::array();
  for (const auto& t : trials) {
    nlohmann::json e{{"task", t.task},   {"scenario", t.scenario}, {"seed", t.seed},   {"score", t.score},
                     {"max_score", t.max_score}, {"length", t.length}, {"cell", t.cell}, {"valid", t.valid}};
    if (!t.valid) e["invalid_reason"] = t.invalid_reason;
    j["trials"].push_back(e);
  }
  if (grid) {
    nlohmann::json g{{"rows", grid->rows}, {"cols", grid->cols}};
    g["seen_mean_pr"] = grid->seen_mean_pr();
    g["unseen_mean_pr"] = grid->unseen_mean_pr();
    g["cells"] = nlohmann::json::array();
    for (const auto& c : grid->cells) {
      g["cells"].push_back({{"row", c.row}, {"col", c.col}, {"seen", c.seen}, {"x", c.center.x()},
                            {"y", c.center.y()}, {"mean_pr", c.mean_pr}, {"n", c.n}});
    }
    j["grid"] = g;
  }
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  try {
    EvalReport r;
    r.task = j.at("task").get<std::string>();
    r.label = j.at("label").get<std::string>();
    r.overall = agg_from(j.at("overall"));
    for (const auto& e : j.at("per_scenario")) r.per_scenario.emplace_back(e.at("scenario").get<std::string>(), agg_from(e));
    for (const auto& e : j.at("trials")) {
      TrialResult t;
      t.task = e.at("task").get<std::string>();
      t.scenario = e.at("scenario").get<std::string>();
      t.seed = e.at("seed").get<std::uint64_t>();
      t.score = e.at("score").get<int>();
      t.max_score = e.at("max_score").get<int>();
      t.length = e.at("length").get<int>();
      t.cell = e.at("cell").get<int>();
      t.valid = e.at("valid").get<bool>();
      if (!t.valid) t.invalid_reason = e.value("invalid_reason", "");
      if (t.score < 0 || t.score > t.max_score) throw FormatError("trial score outside [0, max_score]");
      r.trials.push_back(t);
    }
    if (j.contains("grid")) {
      GridReport g;
      g.rows = j["grid"].at("rows").get<int>();
      g.cols = j["grid"].at("cols").get<int>();
      for (const auto& e : j["grid"].at("cells")) {
        GridCell c;
        c.row = e.at("row").get<int>();
        c.col = e.at("col").get<int>();
        c.seen = e.at("seen").get<bool>();
        c.center = Eigen::Vector2d(e.at("x").get<double>(), e.at("y").get<double>());
        c.mean_pr = e.at("mean_pr").get<double>();
        c.n = e.at("n").get<int>();
        g.cells.push_back(c);
      }
      r.grid = g;
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed evaluation report: ") + e.what());
  }
}

void EvalReport::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << to_json().dump(2) << "\n";
  if (!f) throw IoError("failed writing " + path.string());
}

EvalReport EvalReport::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read evaluation report " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

// ---- grid evaluation -----------------------------------------------------------

std::vector<GridCell> grid_cells(const GridSpec& spec, const Catalog& catalog) {
  if (spec.rows <= 0 || spec.cols <= 0) throw ConfigError("grid rows and cols must be positive");
  if (spec.jitter < 0.0) throw ConfigError("grid jitter must be >= 0");
  const auto it = catalog.regions.find(spec.region);
  if (it == catalog.regions.end()) throw ConfigError("unregistered grid region '" + spec.region + "'");
  const auto seen_it = catalog.regions.find(spec.seen_region);
  if (seen_it == catalog.regions.end()) throw ConfigError("unregistered seen region '" + spec.seen_region + "'");
  const Region& r = it->second;
  const double cw = r.width() / spec.cols, ch = r.height() / spec.rows;
  std::vector<GridCell> cells;
  for (int row = 0; row < spec.rows; ++row) {
    for (int col = 0; col < spec.cols; ++col) {
      GridCell c;
      c.row = row;
      c.col = col;
      c.center = Eigen::Vector2d(r.x0 + (col + 0.5) * cw, r.y0 + (row + 0.5) * ch);
      const double hx = 0.5 * cw + spec.jitter, hy = 0.5 * ch + spec.jitter;
      if (std::abs(c.center.x()) + hx > 1.0 || std::abs(c.center.y()) + hy > 1.0) {
        throw ConfigError("grid cell (" + std::to_string(row) + ", " + std::to_string(col) + ") leaves the workspace");
      }
      c.seen = seen_it->second.contains(c.center);
      cells.push_back(c);
    }
  }
  return cells;
}

EvalReport grid_eval(RolloutPolicy& policy, const std::string& task, const GridSpec& spec, std::uint64_t seed,
                     const RolloutConfig& config, const Catalog& catalog, const FactorConfig& factors) {
  if (spec.trials_per_cell <= 0) throw ConfigError("grid trials_per_cell must be positive");
  auto cells = grid_cells(spec, catalog);
  std::vector<TrialSpec> specs;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    for (int i = 0; i < spec.trials_per_cell; ++i) {
      TrialSpec t;
      t.scenario = "cell_" + std::to_string(cells[k].row) + "_" + std::to_string(cells[k].col);
      t.seed = trial_seed(seed, 1000 + k, static_cast<std::uint64_t>(i));
      t.factors = factors;
      t.cell = static_cast<int>(k);
      std::mt19937_64 r(splitmix(t.seed));
      std::uniform_real_distribution<double> j(-spec.jitter, spec.jitter);
      const Eigen::Vector2d c = cells[k].center;
      t.left_target = Eigen::Vector2d(c.x() + j(r), c.y() + j(r));
      t.right_target = Eigen::Vector2d(-c.x() + j(r), c.y() + j(r));
      specs.push_back(t);
    }
  }
  auto trials = run_specs(policy, task, specs, config, catalog);
  GridReport g;
  g.rows = spec.rows;
  g.cols = spec.cols;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    std::vector<TrialResult> sub;
    for (const auto& t : trials)
      if (t.cell == static_cast<int>(k)) sub.push_back(t);
    const auto a = aggregate(sub);
    cells[k].mean_pr = a.pr;
    cells[k].n = a.n_effective;
  }
  g.cells = cells;
  auto report = make_report(task, "grid", std::move(trials));
  report.grid = g;
  return report;
}

}  // namespace simhum
