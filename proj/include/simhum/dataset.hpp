#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace simhum {

enum class DomainTag { Sim, Human, Real };

std::string_view to_string(DomainTag tag);
DomainTag parse_domain(std::string_view text);

// Robot domains (SIM, REAL) share the gripper embodiment.
inline bool is_robot_domain(DomainTag tag) { return tag != DomainTag::Human; }

struct FactorConfig {
  std::string obj = "base";
  std::string dist = "none";
  int dist_count = 0;
  std::string light = "base";
  std::string bg = "base";
  std::string init = "seen";

  bool operator==(const FactorConfig&) const = default;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// H x W x 3, row-major, 8 bits per channel.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, 0) {}

  std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const Image&) const = default;
};

// One time step of camera input: one image per view.
using Frame = std::vector<Image>;

enum class ActionFrame { Relative, Absolute };

// Where the planar poses, binary gripper flags and absolute (wrist-frame)
// coordinates live inside a state or action vector.
struct VectorLayout {
  int dim = 0;
  std::vector<int> pose_offsets;   // each offset o covers (x, y, theta) at o, o+1, o+2
  std::vector<int> gripper_dims;   // values in {0, 1}
  std::vector<int> absolute_dims;  // copied, never differenced (fingertip offsets)
};

// 2 arms x (x, y, theta, gripper) by default.
VectorLayout robot_layout(int arms = 2);
// hands x (wrist x, y, theta, 4 fingertip (x, y) offsets in the wrist frame).
VectorLayout human_layout(int hands = 2, int fingertips = 4);
// Infers the layout from a domain and vector width.
VectorLayout layout_for(DomainTag domain, int dim);

struct Episode {
  DomainTag domain = DomainTag::Sim;
  std::string task;
  FactorConfig factors;
  double frequency_hz = 10.0;
  std::vector<Frame> observations;
  Matrix states;
  Matrix actions;
  bool scores_available = true;
  ActionFrame action_frame = ActionFrame::Relative;

  int length() const { return static_cast<int>(observations.size()); }
  bool operator==(const Episode& other) const;
};

// Throws InvariantError describing the first violated invariant.
void validate_episode(const Episode& episode);

struct TrainingSample {
  Frame observation;
  Eigen::VectorXd state;
  Matrix action_chunk;               // horizon x d_a
  std::vector<std::uint8_t> padded;  // 1 where the chunk ran past the episode end
  DomainTag domain = DomainTag::Sim;
};

// Chunk starting at `t`; rows past the final action repeat it and are flagged.
TrainingSample extract_sample(const Episode& episode, int t, int horizon);

// ---- on-disk dataset -------------------------------------------------------

struct ManifestRow {
  std::string file;
  DomainTag domain = DomainTag::Sim;
  std::string task;
  FactorConfig factors;
  int length = 0;
  double frequency_hz = 0.0;
};

struct ManifestSummary {
  std::vector<ManifestRow> rows;
  std::map<DomainTag, int> count_by_domain;
};

using EpisodeFilter = std::function<bool(DomainTag, const std::string& task, const FactorConfig&)>;

inline constexpr const char* kManifestName = "manifest.tsv";
inline constexpr const char* kEpisodeExtension = ".shep";

ManifestSummary write_dataset(const std::vector<Episode>& episodes, const std::filesystem::path& dir);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& dir);
std::vector<Episode> read_dataset(const std::filesystem::path& dir, const EpisodeFilter& filter = {});

Episode load_episode(const std::filesystem::path& file);
void save_episode(const Episode& episode, const std::filesystem::path& file);

// Keeps only the reference ("base") value of one factor; the others pass through.
// Unknown factor names throw ConfigError.
EpisodeFilter base_only_filter(const std::string& factor);

// ---- batch composition -----------------------------------------------------

// Uniform-with-replacement sampler over every (episode, t) position of a
// single-domain episode set.
class SamplePool {
 public:
  SamplePool() = default;
  SamplePool(std::vector<Episode> episodes, int horizon);

  bool empty() const { return index_.empty(); }
  std::size_t size() const { return index_.size(); }
  int horizon() const { return horizon_; }
  std::optional<DomainTag> domain() const { return domain_; }
  const std::vector<Episode>& episodes() const { return episodes_; }

  TrainingSample sample(std::mt19937_64& rng) const;

 private:
  std::vector<Episode> episodes_;
  std::vector<std::pair<int, int>> index_;
  int horizon_ = 16;
  std::optional<DomainTag> domain_;
};

// Exact per-batch count used by compose_batch: floor(alpha * B + 0.5).
int human_count(int batch_size, double alpha);

std::vector<TrainingSample> compose_batch(const SamplePool& sim_pool, const SamplePool& hum_pool,
                                          int batch_size, double alpha, std::mt19937_64& rng);

}  // namespace simhum
