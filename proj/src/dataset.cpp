#include "simhum/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "simhum/container.hpp"
#include "simhum/errors.hpp"
#include "simhum/text.hpp"

namespace simhum {

namespace fs = std::filesystem;

std::string_view to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::Sim:
      return "SIM";
    case DomainTag::Human:
      return "HUMAN";
    case DomainTag::Real:
      return "REAL";
  }
  return "?";
}

DomainTag parse_domain(std::string_view text) {
  if (text == "SIM" || text == "sim") return DomainTag::Sim;
  if (text == "HUMAN" || text == "human") return DomainTag::Human;
  if (text == "REAL" || text == "real") return DomainTag::Real;
  throw ArgumentError("unknown domain tag '" + std::string(text) + "'");
}

VectorLayout robot_layout(int arms) {
  VectorLayout l;
  l.dim = 4 * arms;
  for (int a = 0; a < arms; ++a) {
    l.pose_offsets.push_back(4 * a);
    l.gripper_dims.push_back(4 * a + 3);
  }
  return l;
}

VectorLayout human_layout(int hands, int fingertips) {
  VectorLayout l;
  const int block = 3 + 2 * fingertips;
  l.dim = block * hands;
  for (int h = 0; h < hands; ++h) {
    l.pose_offsets.push_back(block * h);
    for (int k = 3; k < block; ++k) l.absolute_dims.push_back(block * h + k);
  }
  return l;
}

VectorLayout layout_for(DomainTag domain, int dim) {
  if (is_robot_domain(domain)) {
    if (dim <= 0 || dim % 4 != 0) {
      throw InvariantError("robot vectors must hold 4 entries per arm, got dim " + std::to_string(dim));
    }
    return robot_layout(dim / 4);
  }
  if (dim <= 0 || dim % 11 != 0) {
    throw InvariantError("human vectors must hold 11 entries per hand, got dim " + std::to_string(dim));
  }
  return human_layout(dim / 11, 4);
}

bool Episode::operator==(const Episode& o) const {
  return domain == o.domain && task == o.task && factors == o.factors && frequency_hz == o.frequency_hz &&
         observations == o.observations && states.rows() == o.states.rows() &&
         states.cols() == o.states.cols() && actions.rows() == o.actions.rows() &&
         actions.cols() == o.actions.cols() && states == o.states && actions == o.actions &&
         scores_available == o.scores_available && action_frame == o.action_frame;
}

void validate_episode(const Episode& ep) {
  const auto n = ep.observations.size();
  if (static_cast<std::size_t>(ep.states.rows()) != n || static_cast<std::size_t>(ep.actions.rows()) != n) {
    throw InvariantError("length mismatch: " + std::to_string(n) + " observations, " +
                         std::to_string(ep.states.rows()) + " states, " + std::to_string(ep.actions.rows()) +
                         " actions");
  }
  if (n < 2) throw InvariantError("episode must have at least 2 steps");
  if (!(ep.frequency_hz > 0.0) || !std::isfinite(ep.frequency_hz)) {
    throw InvariantError("frequency_hz must be positive");
  }
  if (ep.task.empty()) throw InvariantError("episode has no task id");
  const auto& first = ep.observations.front();
  if (first.empty()) throw InvariantError("observation frame has no views");
  for (const auto& frame : ep.observations) {
    if (frame.size() != first.size()) throw InvariantError("view count changes within episode");
    for (std::size_t v = 0; v < frame.size(); ++v) {
      const auto& img = frame[v];
      if (img.height != first[v].height || img.width != first[v].width) {
        throw InvariantError("image size changes within episode");
      }
      if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
        throw InvariantError("image buffer does not match H x W x 3");
      }
    }
  }
  const auto state_layout = layout_for(ep.domain, static_cast<int>(ep.states.cols()));
  const auto action_layout = layout_for(ep.domain, static_cast<int>(ep.actions.cols()));
  (void)state_layout;
  if (!ep.states.allFinite() || !ep.actions.allFinite()) throw InvariantError("non-finite state or action");
  for (int g : action_layout.gripper_dims) {
    for (Eigen::Index t = 0; t < ep.actions.rows(); ++t) {
      const double v = ep.actions(t, g);
      if (v != 0.0 && v != 1.0) {
        throw InvariantError("gripper action at step " + std::to_string(t) + " is " + format_double(v) +
                             ", expected 0 or 1");
      }
    }
  }
}

TrainingSample extract_sample(const Episode& ep, int t, int horizon) {
  if (t < 0 || t >= ep.length()) throw ArgumentError("sample index out of range");
  if (horizon <= 0) throw ArgumentError("horizon must be positive");
  TrainingSample s;
  s.domain = ep.domain;
  s.observation = ep.observations[static_cast<std::size_t>(t)];
  s.state = ep.states.row(t).transpose();
  s.action_chunk.resize(horizon, ep.actions.cols());
  s.padded.assign(static_cast<std::size_t>(horizon), 0);
  const int last = ep.length() - 1;
  for (int k = 0; k < horizon; ++k) {
    const int src = t + k;
    if (src <= last) {
      s.action_chunk.row(k) = ep.actions.row(src);
    } else {
      s.action_chunk.row(k) = ep.actions.row(last);
      s.padded[static_cast<std::size_t>(k)] = 1;
    }
  }
  return s;
}

// ---- container encoding ----------------------------------------------------

void save_episode(const Episode& ep, const fs::path& file) {
  Container c;
  c.set_meta("domain", std::string(to_string(ep.domain)));
  c.set_meta("task", ep.task);
  c.set_meta("obj", ep.factors.obj);
  c.set_meta("dist", ep.factors.dist);
  c.set_meta("dist_count", std::to_string(ep.factors.dist_count));
  c.set_meta("light", ep.factors.light);
  c.set_meta("bg", ep.factors.bg);
  c.set_meta("init", ep.factors.init);
  c.set_meta("frequency_hz", format_double(ep.frequency_hz));
  c.set_meta("scores_available", ep.scores_available ? "1" : "0");
  c.set_meta("action_frame", ep.action_frame == ActionFrame::Relative ? "relative" : "absolute");

  const auto T = static_cast<std::uint64_t>(ep.length());
  const auto V = static_cast<std::uint64_t>(ep.observations.front().size());
  const auto H = static_cast<std::uint64_t>(ep.observations.front().front().height);
  const auto W = static_cast<std::uint64_t>(ep.observations.front().front().width);
  Container::U8Array pixels;
  pixels.reserve(T * V * H * W * 3);
  for (const auto& frame : ep.observations)
    for (const auto& img : frame) pixels.insert(pixels.end(), img.pixels.begin(), img.pixels.end());
  c.set_array("observations", {T, V, H, W, 3}, std::move(pixels));
  c.set_array("states", {T, static_cast<std::uint64_t>(ep.states.cols())},
              Container::F64Array(ep.states.data(), ep.states.data() + ep.states.size()));
  c.set_array("actions", {T, static_cast<std::uint64_t>(ep.actions.cols())},
              Container::F64Array(ep.actions.data(), ep.actions.data() + ep.actions.size()));
  c.save(file);
}

Episode load_episode(const fs::path& file) {
  try {
    const Container c = Container::load(file);
    Episode ep;
    ep.domain = parse_domain(c.meta("domain"));
    ep.task = c.meta("task");
    ep.factors.obj = c.meta("obj");
    ep.factors.dist = c.meta("dist");
    ep.factors.dist_count = parse_int(c.meta("dist_count"), "dist_count");
    ep.factors.light = c.meta("light");
    ep.factors.bg = c.meta("bg");
    ep.factors.init = c.meta("init");
    ep.frequency_hz = parse_double(c.meta("frequency_hz"), "frequency_hz");
    ep.scores_available = c.meta("scores_available") == "1";
    ep.action_frame = c.meta("action_frame") == "absolute" ? ActionFrame::Absolute : ActionFrame::Relative;

    const auto& obs = c.array("observations");
    if (obs.shape.size() != 5 || obs.shape[4] != 3) throw FormatError("observations must be T x V x H x W x 3");
    const auto& px = c.get<std::uint8_t>("observations");
    const auto T = obs.shape[0], V = obs.shape[1], H = obs.shape[2], W = obs.shape[3];
    const std::size_t img_size = H * W * 3;
    ep.observations.resize(T);
    std::size_t offset = 0;
    for (auto& frame : ep.observations) {
      frame.resize(V);
      for (auto& img : frame) {
        img.height = static_cast<int>(H);
        img.width = static_cast<int>(W);
        img.pixels.assign(px.begin() + static_cast<std::ptrdiff_t>(offset),
                          px.begin() + static_cast<std::ptrdiff_t>(offset + img_size));
        offset += img_size;
      }
    }
    auto load_matrix = [&](const char* name) {
      const auto& a = c.array(name);
      if (a.shape.size() != 2) throw FormatError(std::string(name) + " must be 2-d");
      const auto& v = c.get<double>(name);
      Matrix m(static_cast<Eigen::Index>(a.shape[0]), static_cast<Eigen::Index>(a.shape[1]));
      std::copy(v.begin(), v.end(), m.data());
      return m;
    };
    ep.states = load_matrix("states");
    ep.actions = load_matrix("actions");
    return ep;
  } catch (const IoError&) {
    throw;
  } catch (const UserError& e) {
    throw FormatError("episode file '" + file.string() + "': " + e.what());
  }
}

// ---- manifest --------------------------------------------------------------

namespace {

constexpr const char* kManifestHeader = "file\tdomain\ttask\tobj\tdist\tlight\tbg\tinit\tlength\tfrequency_hz";

std::string episode_file_name(std::size_t index) {
  std::ostringstream os;
  os << "ep_" << std::setw(6) << std::setfill('0') << index << kEpisodeExtension;
  return os.str();
}

}  // namespace

ManifestSummary write_dataset(const std::vector<Episode>& episodes, const fs::path& dir) {
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    try {
      validate_episode(episodes[i]);
    } catch (const InvariantError& e) {
      throw InvariantError("episode " + std::to_string(i) + ": " + e.what());
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create dataset directory '" + dir.string() + "': " + ec.message());

  ManifestSummary summary;
  std::ostringstream manifest;
  manifest << kManifestHeader << '\n';
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    ManifestRow row{episode_file_name(i), ep.domain, ep.task, ep.factors, ep.length(), ep.frequency_hz};
    save_episode(ep, dir / row.file);
    manifest << row.file << '\t' << to_string(row.domain) << '\t' << row.task << '\t' << row.factors.obj << '\t'
             << row.factors.dist << ':' << row.factors.dist_count << '\t' << row.factors.light << '\t'
             << row.factors.bg << '\t' << row.factors.init << '\t' << row.length << '\t'
             << format_double(row.frequency_hz) << '\n';
    summary.count_by_domain[row.domain]++;
    summary.rows.push_back(std::move(row));
  }
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  out << manifest.str();
  if (!out) throw IoError("manifest write failed in '" + dir.string() + "'");
  return summary;
}

std::vector<ManifestRow> read_manifest(const fs::path& dir) {
  const auto path = dir / kManifestName;
  std::ifstream in(path);
  if (!in) throw IoError("missing manifest '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) {
    throw FormatError("manifest '" + path.string() + "' has an unexpected header");
  }
  std::vector<ManifestRow> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 10) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected 10 columns");
    }
    ManifestRow r;
    r.file = cols[0];
    r.domain = parse_domain(cols[1]);
    r.task = cols[2];
    r.factors.obj = cols[3];
    const auto colon = cols[4].rfind(':');
    if (colon == std::string::npos) throw FormatError("manifest line " + std::to_string(line_no) + ": bad dist");
    r.factors.dist = cols[4].substr(0, colon);
    r.factors.dist_count = parse_int(cols[4].substr(colon + 1), "dist count");
    r.factors.light = cols[5];
    r.factors.bg = cols[6];
    r.factors.init = cols[7];
    r.length = parse_int(cols[8], "length");
    r.frequency_hz = parse_double(cols[9], "frequency_hz");
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<Episode> read_dataset(const fs::path& dir, const EpisodeFilter& filter) {
  std::vector<Episode> out;
  for (const auto& row : read_manifest(dir)) {
    if (filter && !filter(row.domain, row.task, row.factors)) continue;
    const auto path = dir / row.file;
    if (!fs::exists(path)) throw IoError("missing episode file '" + path.string() + "'");
    out.push_back(load_episode(path));
  }
  return out;
}

EpisodeFilter base_only_filter(const std::string& factor) {
  if (factor == "obj") return [](DomainTag, const std::string&, const FactorConfig& f) { return f.obj == "base"; };
  if (factor == "dist") {
    return [](DomainTag, const std::string&, const FactorConfig& f) { return f.dist == "none" || f.dist_count == 0; };
  }
  if (factor == "light") {
    return [](DomainTag, const std::string&, const FactorConfig& f) { return f.light == "base"; };
  }
  if (factor == "bg") return [](DomainTag, const std::string&, const FactorConfig& f) { return f.bg == "base"; };
  if (factor == "init") return [](DomainTag, const std::string&, const FactorConfig& f) { return f.init == "seen"; };
  if (factor == "none" || factor.empty()) return [](DomainTag, const std::string&, const FactorConfig&) { return true; };
  throw ConfigError("unknown factor '" + factor + "' (expected obj, dist, light, bg, init or none)");
}

// ---- batch composition -----------------------------------------------------

SamplePool::SamplePool(std::vector<Episode> episodes, int horizon) : episodes_(std::move(episodes)), horizon_(horizon) {
  if (horizon <= 0) throw ArgumentError("horizon must be positive");
  for (std::size_t e = 0; e < episodes_.size(); ++e) {
    const auto& ep = episodes_[e];
    if (!domain_) domain_ = ep.domain;
    if (*domain_ != ep.domain) throw ConfigError("sample pool mixes domains");
    for (int t = 0; t < ep.length(); ++t) index_.emplace_back(static_cast<int>(e), t);
  }
}

TrainingSample SamplePool::sample(std::mt19937_64& rng) const {
  if (index_.empty()) throw ConfigError("cannot sample from an empty pool");
  std::uniform_int_distribution<std::size_t> pick(0, index_.size() - 1);
  const auto [e, t] = index_[pick(rng)];
  return extract_sample(episodes_[static_cast<std::size_t>(e)], t, horizon_);
}

int human_count(int batch_size, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1], got " + format_double(alpha));
  if (batch_size <= 0) throw ArgumentError("batch size must be positive");
  return static_cast<int>(std::floor(alpha * batch_size + 0.5));
}

std::vector<TrainingSample> compose_batch(const SamplePool& sim_pool, const SamplePool& hum_pool, int batch_size,
                                          double alpha, std::mt19937_64& rng) {
  const int n_hum = human_count(batch_size, alpha);
  const int n_sim = batch_size - n_hum;
  if (n_hum > 0 && hum_pool.empty()) throw ConfigError("alpha requests human samples but the human pool is empty");
  if (n_sim > 0 && sim_pool.empty()) throw ConfigError("alpha requests sim samples but the sim pool is empty");

  std::vector<TrainingSample> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int i = 0; i < n_hum; ++i) batch.push_back(hum_pool.sample(rng));
  for (int i = 0; i < n_sim; ++i) batch.push_back(sim_pool.sample(rng));
  std::shuffle(batch.begin(), batch.end(), rng);
  return batch;
}

}  // namespace simhum
