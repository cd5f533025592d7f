// simhum: command-line entry point for data generation, training and evaluation.
//
// Every command writes its resolved config next to its outputs. Exit codes:
// 0 success, 1 user or config error, 2 internal error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "simhum/errors.hpp"
#include "simhum/experiment.hpp"
#include "simhum/pipeline.hpp"
#include "simhum/text.hpp"

namespace fs = std::filesystem;
using namespace simhum;

namespace {

struct Globals {
  std::optional<std::string> config;
  std::optional<std::string> preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;
  int threads = 1;
};

ExperimentConfig load_config(const Globals& g) {
  std::optional<fs::path> file;
  if (g.config) file = *g.config;
  auto c = resolve_config(g.preset, file, g.set);
  if (g.seed) c.seed = *g.seed;
  return c;
}

fs::path out_dir(const Globals& g, const char* fallback) {
  fs::path p = g.out.empty() ? fs::path("runs") / fallback : fs::path(g.out);
  fs::create_directories(p);
  return p;
}

std::vector<std::uint64_t> seed_list(const ExperimentConfig& c) {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < c.seeds; ++i) s.push_back(c.seed + static_cast<std::uint64_t>(i));
  return s;
}

PolicyBundle load_required_policy(const std::string& path) {
  if (path.empty()) throw ArgumentError("--policy is required");
  if (!fs::exists(path)) throw IoError("policy checkpoint '" + path + "' not found (run pretrain/finetune first)");
  return load_policy(path);
}

Pools load_required_pools(const std::string& dir) {
  if (!fs::exists(dir)) throw IoError("dataset directory '" + dir + "' not found (run `simhum generate` first)");
  return read_pools(dir);
}

void print_aggregate(const std::string& label, const Aggregate& a) {
  std::printf("%-24s n=%d/%d  SR %6.2f +- %5.2f  PR %6.2f +- %5.2f\n", label.c_str(), a.n_effective, a.n_raw, a.sr,
              a.sr_se, a.pr, a.pr_se);
}

void print_report(const EvalReport& r) {
  for (const auto& [id, a] : r.per_scenario) print_aggregate("  " + id, a);
  print_aggregate(r.label.empty() ? "overall" : r.label, r.overall);
  if (r.grid) {
    std::printf("grid %dx%d  seen PR %.2f  unseen PR %.2f\n", r.grid->rows, r.grid->cols, r.grid->seen_mean_pr(),
                r.grid->unseen_mean_pr());
    for (int row = r.grid->rows - 1; row >= 0; --row) {
      std::printf("  ");
      for (const auto& c : r.grid->cells)
        if (c.row == row) std::printf("%6.1f%s", c.mean_pr, c.seen ? "*" : " ");
      std::printf("\n");
    }
  }
  for (const auto& t : r.trials)
    if (!t.valid) std::printf("  invalid trial %s seed %llu: %s\n", t.scenario.c_str(),
                              static_cast<unsigned long long>(t.seed), t.invalid_reason.c_str());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

// ---- commands ---------------------------------------------------------------------

int cmd_generate(const Globals& g) {
  const auto c = load_config(g);
  const auto dir = out_dir(g, "data");
  const auto pools = generate_pools(c.generate, Catalog::builtin(), c.seed);
  write_pools(pools, dir);
  write_resolved_config(c, dir);
  std::printf("wrote %zu sim, %zu human, %zu real episodes to %s\n", pools.sim.size(), pools.human.size(),
              pools.real.size(), dir.string().c_str());
  return 0;
}

int cmd_pipeline(const Globals& g, const std::string& op, const std::string& in, double hz, double threshold) {
  const auto c = load_config(g);
  if (in.empty()) throw ArgumentError("--in is required");
  if (!fs::exists(in)) throw IoError("dataset directory '" + in + "' not found");
  const auto dir = out_dir(g, "pipeline");
  if (fs::equivalent(dir, in)) throw ArgumentError("--out must differ from --in");
  auto episodes = read_dataset(in);
  for (auto& ep : episodes) {
    if (op == "relativize") ep = relativize(ep);
    else if (op == "prune") ep = prune_static(ep, threshold);
    else if (op == "resample") ep = resample(ep, hz);
    else if (op == "all") ep = resample(prune_static(relativize(ep), threshold), hz);
    else throw ArgumentError("unknown pipeline step '" + op + "' (expected relativize, prune, resample or all)");
  }
  write_dataset(episodes, dir);
  write_resolved_config(c, dir);
  std::printf("%s: %zu episodes -> %s\n", op.c_str(), episodes.size(), dir.string().c_str());
  return 0;
}

int cmd_pretrain(const Globals& g, const std::string& data, const std::string& mode_text, std::optional<double> alpha) {
  const auto c = load_config(g);
  const auto mode = parse_finetune_mode(mode_text);
  if (mode == FinetuneMode::RealOnly) throw ArgumentError("real-only mode has no pretraining stage");
  const auto pools = load_required_pools(data);
  const auto dir = out_dir(g, "pretrain");
  write_resolved_config(c, dir);
  const auto r = pretrain_for_mode(pools, mode, c, c.seed, alpha, dir);
  std::printf("pretrained %s for %zu steps, final loss %.5f -> %s\n", mode_text.c_str(), r.log.size(),
              r.log.empty() ? 0.0 : r.log.back().loss_total, (dir / kPolicyFile).string().c_str());
  return 0;
}

int cmd_finetune(const Globals& g, const std::string& data, const std::string& mode_text, const std::string& from) {
  const auto c = load_config(g);
  const auto mode = parse_finetune_mode(mode_text);
  PolicyBundle pre;
  if (mode == FinetuneMode::RealOnly) {
    if (!from.empty()) throw ArgumentError("real-only mode starts from a fresh policy; drop --pretrained");
    pre = init_policy(c.policy, c.seed);
  } else {
    if (from.empty()) throw ArgumentError("--pretrained is required for mode " + mode_text);
    pre = load_required_policy(from);
  }
  const auto pools = load_required_pools(data);
  const auto dir = out_dir(g, "finetune");
  write_resolved_config(c, dir);
  TrainConfig t = c.finetune;
  t.stage = Stage::Finetune;
  t.seed = c.seed;
  t.out_dir = dir;
  const auto r = finetune(pre, pools.real, mode, t, c.schedule());
  std::printf("fine-tuned %s for %zu steps, final loss %.5f -> %s\n", mode_text.c_str(), r.log.size(),
              r.log.empty() ? 0.0 : r.log.back().loss_total, (dir / kPolicyFile).string().c_str());
  return 0;
}

int cmd_eval(const Globals& g, const std::string& policy, std::optional<std::string> battery_name) {
  auto c = load_config(g);
  if (battery_name) c.battery = *battery_name;
  const auto bundle = load_required_policy(policy);
  const auto dir = out_dir(g, "eval");
  write_resolved_config(c, dir);
  auto r = evaluate_policy(bundle, c, battery(c.battery), c.seed, c.battery);
  r.save(dir / "report.json");
  print_report(r);
  return 0;
}

int cmd_grid(const Globals& g, const std::string& policy) {
  const auto c = load_config(g);
  const auto bundle = load_required_policy(policy);
  const auto dir = out_dir(g, "grid");
  write_resolved_config(c, dir);
  const auto r = grid_evaluate_policy(bundle, c, c.seed, "grid");
  r.save(dir / "grid.json");
  print_report(r);
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& data, const std::string& factor) {
  const auto c = load_config(g);
  const auto pools = load_required_pools(data);
  const auto dir = out_dir(g, "ablate");
  write_resolved_config(c, dir);
  const auto r = factor_ablation(pools, factor, c, c.seed);
  r.full.save(dir / ("full_" + factor + ".json"));
  r.without.save(dir / ("without_" + factor + ".json"));
  print_report(r.full);
  print_report(r.without);
  return 0;
}

int cmd_sweep_alpha(const Globals& g, const std::string& data) {
  const auto c = load_config(g);
  const auto pools = load_required_pools(data);
  const auto dir = out_dir(g, "sweep_alpha");
  write_resolved_config(c, dir);
  const auto rows = alpha_sweep(pools, c.alphas, c, seed_list(c));
  const auto table = sweep_table(rows);
  write_text(dir / "alpha_sweep.tsv", table);
  std::cout << table;
  return 0;
}

int cmd_sweep_budget(const Globals& g, const std::string& data, double scale) {
  const auto c = load_config(g);
  const auto pools = load_required_pools(data);
  const auto dir = out_dir(g, "sweep_budget");
  write_resolved_config(c, dir);
  const auto rows = budget_sweep(pools, budget_rows(scale), c, seed_list(c));
  const auto table = sweep_table(rows);
  write_text(dir / "budget_sweep.tsv", table);
  std::cout << table;
  return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& e : fs::recursive_directory_iterator(in))
        if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    } else if (fs::exists(in)) {
      files.emplace_back(in);
    } else {
      throw IoError("report input '" + in + "' not found");
    }
  }
  if (files.empty()) throw ArgumentError("no report files found");
  std::sort(files.begin(), files.end());
  std::ostringstream tsv;
  tsv << "file\tlabel\tn\tsr\tsr_se\tpr\tpr_se\tgrid_seen_pr\tgrid_unseen_pr\n";
  for (const auto& f : files) {
    const auto r = EvalReport::load(f);
    std::printf("== %s\n", f.string().c_str());
    print_report(r);
    tsv << f.string() << '\t' << r.label << '\t' << r.overall.n_effective << '\t' << format_double(r.overall.sr) << '\t'
        << format_double(r.overall.sr_se) << '\t' << format_double(r.overall.pr) << '\t'
        << format_double(r.overall.pr_se) << '\t' << (r.grid ? format_double(r.grid->seen_mean_pr()) : "-") << '\t'
        << (r.grid ? format_double(r.grid->unseen_mean_pr()) : "-") << '\n';
  }
  if (!g.out.empty()) {
    fs::create_directories(g.out);
    write_text(fs::path(g.out) / "summary.tsv", tsv.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sim-and-human co-training of a visuomotor diffusion policy on a toy bimanual world"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option("--config", g.config, "Layered key=value config file")->check(CLI::ExistingFile);
  app.add_option("--preset", g.preset, "Base preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--seed", g.seed, "Global seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.set, "section.key=value override (repeatable)");
  app.add_option("--threads", g.threads, "Intra-op threads; results are reproducible for a fixed count")
      ->check(CLI::PositiveNumber);

  std::string data = "runs/data", policy, mode = "simhum", pretrained, factor, op, in;
  std::optional<double> alpha;
  std::optional<std::string> battery_name;
  double hz = 10.0, threshold = kDefaultMotionThreshold, scale = 0.2;
  std::vector<std::string> inputs;

  auto* generate = app.add_subcommand("generate", "Generate the SIM, HUMAN and REAL pools");
  auto* pipeline = app.add_subcommand("pipeline", "Apply a processing step to every episode of a dataset");
  pipeline->add_option("step", op, "relativize | prune | resample | all")->required();
  pipeline->add_option("--in", in, "Input dataset directory")->required();
  pipeline->add_option("--hz", hz, "Target frequency for resample");
  pipeline->add_option("--threshold", threshold, "Per-step motion threshold for prune");

  auto* pre = app.add_subcommand("pretrain", "Sim-and-human pretraining");
  pre->add_option("--data", data, "Dataset directory from generate");
  pre->add_option("--mode", mode, "simhum | sim-real | hum-real");
  pre->add_option("--alpha", alpha, "Override the co-training ratio")->check(CLI::Range(0.0, 1.0));

  auto* ft = app.add_subcommand("finetune", "Real-robot fine-tuning");
  ft->add_option("--data", data, "Dataset directory from generate");
  ft->add_option("--mode", mode, "simhum | sim-real | hum-real | real-only");
  ft->add_option("--pretrained", pretrained, "Pretrained checkpoint");

  auto* ev = app.add_subcommand("eval", "Evaluate a policy on a scenario battery");
  ev->add_option("--policy", policy, "Policy checkpoint")->required();
  ev->add_option("--battery", battery_name, "id | ood");

  auto* grid = app.add_subcommand("grid-eval", "Per-cell progress over the placement grid");
  grid->add_option("--policy", policy, "Policy checkpoint")->required();

  auto* ablate = app.add_subcommand("ablate-factor", "Leave-one-factor-out comparison");
  ablate->add_option("--data", data, "Dataset directory from generate");
  ablate->add_option("--factor", factor, "obj | dist | light | bg | init")->required();

  auto* sa = app.add_subcommand("sweep-alpha", "Co-training ratio sweep");
  sa->add_option("--data", data, "Dataset directory from generate");

  auto* sb = app.add_subcommand("sweep-budget", "Data budget sweep");
  sb->add_option("--data", data, "Dataset directory from generate");
  sb->add_option("--scale", scale, "Episode count scale relative to the paper-preset budget rows")->check(CLI::PositiveNumber);

  auto* report = app.add_subcommand("report", "Summarize evaluation reports");
  report->add_option("inputs", inputs, "Report files or directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    torch::set_num_threads(g.threads);
    if (*generate) return cmd_generate(g);
    if (*pipeline) return cmd_pipeline(g, op, in, hz, threshold);
    if (*pre) return cmd_pretrain(g, data, mode, alpha);
    if (*ft) return cmd_finetune(g, data, mode, pretrained);
    if (*ev) return cmd_eval(g, policy, battery_name);
    if (*grid) return cmd_grid(g, policy);
    if (*ablate) return cmd_ablate(g, data, factor);
    if (*sa) return cmd_sweep_alpha(g, data);
    if (*sb) return cmd_sweep_budget(g, data, scale);
    if (*report) return cmd_report(g, inputs);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
