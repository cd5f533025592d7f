#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "simhum/dataset.hpp"

namespace simhum {

struct PolicyConfig {
  int views = 1;
  int image_height = 64;
  int image_width = 64;
  std::array<int, 3> conv_channels{16, 32, 32};
  int hidden = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int ff_mult = 4;
  int horizon = 16;
  int robot_state_dim = 8;
  int robot_action_dim = 8;
  int human_state_dim = 22;
  int human_action_dim = 22;
  double state_dropout = 0.2;
  bool double_precision = false;
  // Cleared by recombine_for_real.
  bool has_sim_adaptors = true;
  bool has_human_branch = true;

  // Flattened conv3 map: two stride-2 convolutions, so ceil(H/4) x ceil(W/4) cells.
  int visual_features() const { return conv_channels[2] * ((image_height + 3) / 4) * ((image_width + 3) / 4); }
  int obs_tokens() const { return views + 1; }
  void check() const;  // ConfigError on inconsistent dims

  nlohmann::json to_json() const;
  static PolicyConfig from_json(const nlohmann::json& j);
  bool operator==(const PolicyConfig&) const = default;
};

// ---- normalization -----------------------------------------------------------

// Per-dimension affine map of [lo, hi] onto [-1, 1]. Constant dimensions map to 0
// and back to their constant.
struct AffineNorm {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Eigen::VectorXd scale() const;
  Eigen::VectorXd normalize(const Eigen::VectorXd& x) const;
  Eigen::VectorXd denormalize(const Eigen::VectorXd& y) const;
  static AffineNorm fit(const std::vector<const Matrix*>& rows);
  bool operator==(const AffineNorm&) const = default;
};

enum class EmbodimentBranch { Robot, Human };

struct Normalization {
  std::optional<AffineNorm> robot_state, robot_action, human_state, human_action;

  const AffineNorm& state(EmbodimentBranch e) const;
  const AffineNorm& action(EmbodimentBranch e) const;
  bool has(EmbodimentBranch e) const;
  // Fills the entries for one embodiment from a set of episodes of that embodiment.
  void fit(EmbodimentBranch e, const std::vector<Episode>& episodes);
  bool operator==(const Normalization&) const = default;
};

inline EmbodimentBranch embodiment_of(DomainTag d) {
  return is_robot_domain(d) ? EmbodimentBranch::Robot : EmbodimentBranch::Human;
}

// ---- network -------------------------------------------------------------------

enum class VisualRoute { SimAdaptors, RealAdaptor };

struct Route {
  VisualRoute visual = VisualRoute::RealAdaptor;
  EmbodimentBranch embodiment = EmbodimentBranch::Robot;
};

// SIM -> sim adaptors + robot, HUMAN -> real adaptor + human, REAL -> real adaptor + robot.
Route route_for(DomainTag domain);

// Top-level module names that a route touches.
std::set<std::string> routed_modules(const PolicyConfig& config, const Route& route);
std::set<std::string> routed_modules(const PolicyConfig& config, DomainTag domain);
// Name of the top-level module owning a parameter ("sim_adaptor_0.fc1.weight" -> "sim_adaptor_0").
std::string module_of(const std::string& parameter_name);

struct VisionEncoderImpl : torch::nn::Module {
  VisionEncoderImpl(const std::array<int, 3>& channels);
  torch::Tensor forward(const torch::Tensor& images);  // B x 3 x H x W -> B x visual_features()
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr};
};
TORCH_MODULE(VisionEncoder);

struct AdaptorImpl : torch::nn::Module {
  AdaptorImpl(int in, int hidden);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Adaptor);

struct StateEncoderImpl : torch::nn::Module {
  StateEncoderImpl(int state_dim, int hidden, double dropout);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Dropout dropout{nullptr};
  torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(StateEncoder);

struct ActionProjectorImpl : torch::nn::Module {
  ActionProjectorImpl(int action_dim, int hidden);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(ActionProjector);

struct AttentionImpl : torch::nn::Module {
  AttentionImpl(int hidden, int heads);
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context);
  int heads;
  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, out{nullptr};
};
TORCH_MODULE(Attention);

struct EncoderBlockImpl : torch::nn::Module {
  EncoderBlockImpl(int hidden, int heads, int ff_mult);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  Attention attn{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
};
TORCH_MODULE(EncoderBlock);

// Self-attention and feed-forward are modulated (shift, scale) by the timestep
// embedding; cross-attention reads the encoded observation tokens.
struct DecoderBlockImpl : torch::nn::Module {
  DecoderBlockImpl(int hidden, int heads, int ff_mult);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& memory, const torch::Tensor& cond);
  torch::nn::Linear modulation{nullptr};
  torch::nn::LayerNorm ln1{nullptr}, ln_cross{nullptr}, ln2{nullptr};
  Attention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::Linear ff1{nullptr}, ff2{nullptr};
};
TORCH_MODULE(DecoderBlock);

struct BackboneImpl : torch::nn::Module {
  explicit BackboneImpl(const PolicyConfig& c);
  // obs_tokens: B x N x D, action_tokens: B x H x D, t: B (int64)
  torch::Tensor forward(const torch::Tensor& obs_tokens, const torch::Tensor& action_tokens, const torch::Tensor& t);
  int hidden;
  torch::nn::Linear time_fc1{nullptr}, time_fc2{nullptr};
  torch::Tensor obs_pos, action_pos;
  std::vector<EncoderBlock> encoder;
  std::vector<DecoderBlock> decoder;
  torch::nn::LayerNorm final_ln{nullptr};
};
TORCH_MODULE(Backbone);

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int dim);

struct PolicyNetImpl : torch::nn::Module {
  explicit PolicyNetImpl(const PolicyConfig& c);

  // images: B x V x 3 x H x W in [0, 1]; state: B x d_s; z: B x H x d_a (both normalized).
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& state, const torch::Tensor& z,
                        const torch::Tensor& t, const Route& route);

  PolicyConfig config;
  std::vector<VisionEncoder> vision_encoders;
  std::vector<Adaptor> sim_adaptors;
  Adaptor real_adaptor{nullptr};
  StateEncoder state_encoder_robot{nullptr}, state_encoder_human{nullptr};
  ActionProjector action_projector_robot{nullptr}, action_projector_human{nullptr};
  Backbone backbone{nullptr};
  torch::nn::Linear head_robot{nullptr}, head_human{nullptr};
};
TORCH_MODULE(PolicyNet);

// ---- bundle --------------------------------------------------------------------

struct PolicyBundle {
  PolicyConfig config;
  PolicyNet net{nullptr};
  Normalization norm;

  std::int64_t parameter_count() const;
  std::map<std::string, torch::Tensor> named_parameters() const;
  // FNV-1a over the raw bytes of each parameter tensor, keyed by name.
  std::map<std::string, std::uint64_t> parameter_checksums() const;
  std::uint64_t checksum() const;
};

// Deterministic per-parameter initialization keyed by (seed, parameter name).
PolicyBundle init_policy(const PolicyConfig& config, std::uint64_t seed);
// Re-draws the named top-level modules with the init scheme under `seed`.
void reinitialize_modules(PolicyBundle& bundle, const std::set<std::string>& modules, std::uint64_t seed);

// Model input tensors for a single-domain batch.
struct BatchTensors {
  torch::Tensor images;   // B x V x 3 x H x W
  torch::Tensor state;    // B x d_s (normalized)
  torch::Tensor actions;  // B x H x d_a (normalized)
  DomainTag domain = DomainTag::Sim;
};

// Throws RoutingError when the samples span more than one domain.
BatchTensors make_batch(const PolicyBundle& bundle, const std::vector<const TrainingSample*>& samples);
BatchTensors make_batch(const PolicyBundle& bundle, const std::vector<TrainingSample>& samples);
torch::Tensor frames_to_tensor(const std::vector<const Frame*>& frames, torch::ScalarType dtype);

torch::Tensor predict_noise(const PolicyBundle& bundle, const BatchTensors& batch, const torch::Tensor& z_t,
                            const torch::Tensor& t);
torch::Tensor predict_noise(const PolicyBundle& bundle, const std::vector<TrainingSample>& batch,
                            const torch::Tensor& z_t, const torch::Tensor& t);

// Keeps vision encoders, real adaptor, backbone and the robot branch, copying
// their parameters bit-for-bit. Throws StructuralError when a branch is missing.
PolicyBundle recombine_for_real(const PolicyBundle& pretrained);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_policy(const PolicyBundle& bundle, const std::filesystem::path& path);
PolicyBundle load_policy(const std::filesystem::path& path);

}  // namespace simhum
