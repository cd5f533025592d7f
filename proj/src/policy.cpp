#include "simhum/policy.hpp"

#include <cmath>
#include <random>

#include "simhum/container.hpp"
#include "simhum/errors.hpp"

namespace simhum {

namespace nn = torch::nn;
using nlohmann::json;

// ---- config ----------------------------------------------------------------

void PolicyConfig::check() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("policy.") + name + " must be positive, got " + std::to_string(v));
  };
  positive(views, "views");
  positive(image_height, "image_height");
  positive(image_width, "image_width");
  for (int c : conv_channels) positive(c, "conv_channels");
  positive(hidden, "hidden");
  positive(heads, "heads");
  positive(ff_mult, "ff_mult");
  positive(horizon, "horizon");
  positive(robot_state_dim, "robot_state_dim");
  positive(robot_action_dim, "robot_action_dim");
  positive(human_state_dim, "human_state_dim");
  positive(human_action_dim, "human_action_dim");
  if (encoder_layers < 0 || decoder_layers < 0) throw ConfigError("policy layer counts must be non-negative");
  if (hidden % heads != 0) {
    throw ConfigError("policy.hidden (" + std::to_string(hidden) + ") must be divisible by policy.heads (" +
                      std::to_string(heads) + ")");
  }
  if (hidden % 2 != 0) throw ConfigError("policy.hidden must be even for the sinusoidal timestep embedding");
  if (state_dropout < 0.0 || state_dropout >= 1.0) throw ConfigError("policy.state_dropout must be in [0, 1)");
}

json PolicyConfig::to_json() const {
  return json{{"views", views},
              {"image_height", image_height},
              {"image_width", image_width},
              {"conv_channels", conv_channels},
              {"hidden", hidden},
              {"heads", heads},
              {"encoder_layers", encoder_layers},
              {"decoder_layers", decoder_layers},
              {"ff_mult", ff_mult},
              {"horizon", horizon},
              {"robot_state_dim", robot_state_dim},
              {"robot_action_dim", robot_action_dim},
              {"human_state_dim", human_state_dim},
              {"human_action_dim", human_action_dim},
              {"state_dropout", state_dropout},
              {"double_precision", double_precision},
              {"has_sim_adaptors", has_sim_adaptors},
              {"has_human_branch", has_human_branch}};
}

PolicyConfig PolicyConfig::from_json(const json& j) {
  PolicyConfig c;
  try {
    c.views = j.at("views");
    c.image_height = j.at("image_height");
    c.image_width = j.at("image_width");
    c.conv_channels = j.at("conv_channels").get<std::array<int, 3>>();
    c.hidden = j.at("hidden");
    c.heads = j.at("heads");
    c.encoder_layers = j.at("encoder_layers");
    c.decoder_layers = j.at("decoder_layers");
    c.ff_mult = j.at("ff_mult");
    c.horizon = j.at("horizon");
    c.robot_state_dim = j.at("robot_state_dim");
    c.robot_action_dim = j.at("robot_action_dim");
    c.human_state_dim = j.at("human_state_dim");
    c.human_action_dim = j.at("human_action_dim");
    c.state_dropout = j.at("state_dropout");
    c.double_precision = j.at("double_precision");
    c.has_sim_adaptors = j.at("has_sim_adaptors");
    c.has_human_branch = j.at("has_human_branch");
  } catch (const json::exception& e) {
    throw FormatError(std::string("policy config block: ") + e.what());
  }
  c.check();
  return c;
}

// ---- normalization -----------------------------------------------------------

Eigen::VectorXd AffineNorm::scale() const {
  Eigen::VectorXd s = 0.5 * (hi - lo);
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (!(s(i) > 1e-9)) s(i) = 1.0;
  return s;
}

Eigen::VectorXd AffineNorm::normalize(const Eigen::VectorXd& x) const {
  return (x - 0.5 * (hi + lo)).cwiseQuotient(scale());
}

Eigen::VectorXd AffineNorm::denormalize(const Eigen::VectorXd& y) const {
  Eigen::VectorXd x = y.cwiseProduct(scale()) + 0.5 * (hi + lo);
  for (Eigen::Index i = 0; i < x.size(); ++i)
    if (!(hi(i) - lo(i) > 2e-9)) x(i) = lo(i);
  return x;
}

AffineNorm AffineNorm::fit(const std::vector<const Matrix*>& mats) {
  AffineNorm n;
  for (const Matrix* m : mats) {
    if (m->rows() == 0) continue;
    const Eigen::VectorXd lo = m->colwise().minCoeff().transpose();
    const Eigen::VectorXd hi = m->colwise().maxCoeff().transpose();
    if (n.lo.size() == 0) {
      n.lo = lo;
      n.hi = hi;
    } else {
      if (lo.size() != n.lo.size()) throw ConfigError("normalization over vectors of different widths");
      n.lo = n.lo.cwiseMin(lo);
      n.hi = n.hi.cwiseMax(hi);
    }
  }
  if (n.lo.size() == 0) throw ConfigError("cannot fit normalization on an empty pool");
  return n;
}

const AffineNorm& Normalization::state(EmbodimentBranch e) const {
  const auto& s = e == EmbodimentBranch::Robot ? robot_state : human_state;
  if (!s) throw ConfigError(std::string("normalization statistics missing for the ") +
                            (e == EmbodimentBranch::Robot ? "robot" : "human") + " embodiment");
  return *s;
}

const AffineNorm& Normalization::action(EmbodimentBranch e) const {
  const auto& s = e == EmbodimentBranch::Robot ? robot_action : human_action;
  if (!s) throw ConfigError(std::string("normalization statistics missing for the ") +
                            (e == EmbodimentBranch::Robot ? "robot" : "human") + " embodiment");
  return *s;
}

bool Normalization::has(EmbodimentBranch e) const {
  return e == EmbodimentBranch::Robot ? robot_state && robot_action : human_state && human_action;
}

void Normalization::fit(EmbodimentBranch e, const std::vector<Episode>& episodes) {
  std::vector<const Matrix*> states, actions;
  for (const auto& ep : episodes) {
    if (embodiment_of(ep.domain) != e) throw ConfigError("normalization pool mixes embodiments");
    states.push_back(&ep.states);
    actions.push_back(&ep.actions);
  }
  auto& s = e == EmbodimentBranch::Robot ? robot_state : human_state;
  auto& a = e == EmbodimentBranch::Robot ? robot_action : human_action;
  s = AffineNorm::fit(states);
  a = AffineNorm::fit(actions);
}

// ---- routing -------------------------------------------------------------------

Route route_for(DomainTag d) {
  switch (d) {
    case DomainTag::Sim: return {VisualRoute::SimAdaptors, EmbodimentBranch::Robot};
    case DomainTag::Human: return {VisualRoute::RealAdaptor, EmbodimentBranch::Human};
    case DomainTag::Real: return {VisualRoute::RealAdaptor, EmbodimentBranch::Robot};
  }
  throw RoutingError("unknown domain");
}

std::set<std::string> routed_modules(const PolicyConfig& c, const Route& r) {
  std::set<std::string> m = {"backbone"};
  for (int v = 0; v < c.views; ++v) {
    m.insert("vision_encoder_" + std::to_string(v));
    if (r.visual == VisualRoute::SimAdaptors) m.insert("sim_adaptor_" + std::to_string(v));
  }
  if (r.visual == VisualRoute::RealAdaptor) m.insert("real_adaptor");
  const std::string suffix = r.embodiment == EmbodimentBranch::Robot ? "robot" : "human";
  m.insert("state_encoder_" + suffix);
  m.insert("action_projector_" + suffix);
  m.insert("head_" + suffix);
  return m;
}

std::set<std::string> routed_modules(const PolicyConfig& c, DomainTag d) { return routed_modules(c, route_for(d)); }

std::string module_of(const std::string& name) { return name.substr(0, name.find('.')); }

// ---- modules -------------------------------------------------------------------

namespace {

// Parameter-free group norm; falls back to one group when 4 does not divide C.
torch::Tensor group_norm(const torch::Tensor& x) { return torch::group_norm(x, x.size(1) % 4 == 0 ? 4 : 1); }

}  // namespace

VisionEncoderImpl::VisionEncoderImpl(const std::array<int, 3>& ch) {
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(3, ch[0], 5).stride(2).padding(2)));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(ch[0], ch[1], 3).stride(2).padding(1)));
  conv3 = register_module("conv3", nn::Conv2d(nn::Conv2dOptions(ch[1], ch[2], 3).stride(1).padding(1)));
}

torch::Tensor VisionEncoderImpl::forward(const torch::Tensor& images) {
  auto x = torch::gelu(group_norm(conv1(images * 2.0 - 1.0)));
  x = torch::gelu(group_norm(conv2(x)));
  return torch::gelu(conv3(x)).flatten(1);
}

AdaptorImpl::AdaptorImpl(int in, int hidden) {
  fc1 = register_module("fc1", nn::Linear(in, hidden));
  fc2 = register_module("fc2", nn::Linear(hidden, hidden));
}

torch::Tensor AdaptorImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

StateEncoderImpl::StateEncoderImpl(int state_dim, int hidden, double p) {
  dropout = register_module("dropout", nn::Dropout(p));
  fc = register_module("fc", nn::Linear(state_dim, hidden));
}

torch::Tensor StateEncoderImpl::forward(const torch::Tensor& x) { return fc(dropout(x)); }

ActionProjectorImpl::ActionProjectorImpl(int action_dim, int hidden) {
  fc1 = register_module("fc1", nn::Linear(action_dim, hidden));
  fc2 = register_module("fc2", nn::Linear(hidden, hidden));
}

torch::Tensor ActionProjectorImpl::forward(const torch::Tensor& x) { return fc2(torch::gelu(fc1(x))); }

AttentionImpl::AttentionImpl(int hidden, int h) : heads(h) {
  q = register_module("q", nn::Linear(hidden, hidden));
  k = register_module("k", nn::Linear(hidden, hidden));
  v = register_module("v", nn::Linear(hidden, hidden));
  out = register_module("out", nn::Linear(hidden, hidden));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& context) {
  const auto B = query.size(0), Nq = query.size(1), Nk = context.size(1), D = query.size(2);
  const auto dh = D / heads;
  auto split = [&](const torch::Tensor& x, std::int64_t n) { return x.reshape({B, n, heads, dh}).transpose(1, 2); };
  auto qh = split(q(query), Nq);
  auto kh = split(k(context), Nk);
  auto vh = split(v(context), Nk);
  auto scores = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh));
  auto y = torch::matmul(torch::softmax(scores, -1), vh);
  return out(y.transpose(1, 2).reshape({B, Nq, D}));
}

EncoderBlockImpl::EncoderBlockImpl(int hidden, int heads, int ff_mult) {
  ln1 = register_module("ln1", nn::LayerNorm(nn::LayerNormOptions({hidden})));
  attn = register_module("attn", Attention(hidden, heads));
  ln2 = register_module("ln2", nn::LayerNorm(nn::LayerNormOptions({hidden})));
  ff1 = register_module("ff1", nn::Linear(hidden, hidden * ff_mult));
  ff2 = register_module("ff2", nn::Linear(hidden * ff_mult, hidden));
}

torch::Tensor EncoderBlockImpl::forward(const torch::Tensor& x) {
  auto n = ln1(x);
  auto h = x + attn(n, n);
  return h + ff2(torch::gelu(ff1(ln2(h))));
}

DecoderBlockImpl::DecoderBlockImpl(int hidden, int heads, int ff_mult) {
  modulation = register_module("modulation", nn::Linear(hidden, 4 * hidden));
  ln1 = register_module("ln1", nn::LayerNorm(nn::LayerNormOptions({hidden}).elementwise_affine(false)));
  self_attn = register_module("self_attn", Attention(hidden, heads));
  ln_cross = register_module("ln_cross", nn::LayerNorm(nn::LayerNormOptions({hidden})));
  cross_attn = register_module("cross_attn", Attention(hidden, heads));
  ln2 = register_module("ln2", nn::LayerNorm(nn::LayerNormOptions({hidden}).elementwise_affine(false)));
  ff1 = register_module("ff1", nn::Linear(hidden, hidden * ff_mult));
  ff2 = register_module("ff2", nn::Linear(hidden * ff_mult, hidden));
}

torch::Tensor DecoderBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& memory, const torch::Tensor& cond) {
  auto m = modulation(torch::silu(cond)).unsqueeze(1).chunk(4, -1);
  auto a = ln1(x) * (1.0 + m[1]) + m[0];
  auto h = x + self_attn(a, a);
  h = h + cross_attn(ln_cross(h), memory);
  auto f = ln2(h) * (1.0 + m[3]) + m[2];
  return h + ff2(torch::gelu(ff1(f)));
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int dim) {
  const int half = dim / 2;
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / half);
  auto args = t.to(torch::kFloat64).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

BackboneImpl::BackboneImpl(const PolicyConfig& c) : hidden(c.hidden) {
  time_fc1 = register_module("time_fc1", nn::Linear(c.hidden, c.hidden));
  time_fc2 = register_module("time_fc2", nn::Linear(c.hidden, c.hidden));
  obs_pos = register_parameter("obs_pos", torch::zeros({c.obs_tokens(), c.hidden}));
  action_pos = register_parameter("action_pos", torch::zeros({c.horizon, c.hidden}));
  for (int i = 0; i < c.encoder_layers; ++i)
    encoder.push_back(register_module("encoder_" + std::to_string(i), EncoderBlock(c.hidden, c.heads, c.ff_mult)));
  for (int i = 0; i < c.decoder_layers; ++i)
    decoder.push_back(register_module("decoder_" + std::to_string(i), DecoderBlock(c.hidden, c.heads, c.ff_mult)));
  final_ln = register_module("final_ln", nn::LayerNorm(nn::LayerNormOptions({c.hidden})));
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& obs_tokens, const torch::Tensor& action_tokens,
                                    const torch::Tensor& t) {
  auto memory = obs_tokens + obs_pos;
  for (auto& block : encoder) memory = block(memory);
  auto emb = sinusoidal_embedding(t, hidden).to(action_tokens.scalar_type());
  auto cond = time_fc2(torch::gelu(time_fc1(emb)));
  auto x = action_tokens + action_pos;
  for (auto& block : decoder) x = block(x, memory, cond);
  return final_ln(x);
}

PolicyNetImpl::PolicyNetImpl(const PolicyConfig& c) : config(c) {
  c.check();
  for (int v = 0; v < c.views; ++v)
    vision_encoders.push_back(register_module("vision_encoder_" + std::to_string(v), VisionEncoder(c.conv_channels)));
  if (c.has_sim_adaptors) {
    for (int v = 0; v < c.views; ++v)
      sim_adaptors.push_back(register_module("sim_adaptor_" + std::to_string(v), Adaptor(c.visual_features(), c.hidden)));
  }
  real_adaptor = register_module("real_adaptor", Adaptor(c.visual_features(), c.hidden));
  state_encoder_robot = register_module("state_encoder_robot", StateEncoder(c.robot_state_dim, c.hidden, c.state_dropout));
  if (c.has_human_branch)
    state_encoder_human = register_module("state_encoder_human", StateEncoder(c.human_state_dim, c.hidden, c.state_dropout));
  action_projector_robot = register_module("action_projector_robot", ActionProjector(c.robot_action_dim, c.hidden));
  if (c.has_human_branch)
    action_projector_human = register_module("action_projector_human", ActionProjector(c.human_action_dim, c.hidden));
  backbone = register_module("backbone", Backbone(c));
  head_robot = register_module("head_robot", nn::Linear(c.hidden, c.robot_action_dim));
  if (c.has_human_branch) head_human = register_module("head_human", nn::Linear(c.hidden, c.human_action_dim));
}

torch::Tensor PolicyNetImpl::forward(const torch::Tensor& images, const torch::Tensor& state, const torch::Tensor& z,
                                     const torch::Tensor& t, const Route& route) {
  const bool robot = route.embodiment == EmbodimentBranch::Robot;
  if (route.visual == VisualRoute::SimAdaptors && !config.has_sim_adaptors) {
    throw RoutingError("bundle has no sim adaptors (recombined for real-robot fine-tuning)");
  }
  if (!robot && !config.has_human_branch) throw RoutingError("bundle has no human branch");
  if (images.dim() != 5 || images.size(1) != config.views) {
    throw ConfigError("expected " + std::to_string(config.views) + " camera views in the image batch");
  }
  const int d_a = robot ? config.robot_action_dim : config.human_action_dim;
  const int d_s = robot ? config.robot_state_dim : config.human_state_dim;
  if (z.dim() != 3 || z.size(1) != config.horizon || z.size(2) != d_a) {
    throw ConfigError("noisy chunk must be B x " + std::to_string(config.horizon) + " x " + std::to_string(d_a));
  }
  if (state.dim() != 2 || state.size(1) != d_s) throw ConfigError("state width does not match the routed branch");

  std::vector<torch::Tensor> tokens;
  for (int v = 0; v < config.views; ++v) {
    auto feat = vision_encoders[static_cast<std::size_t>(v)](images.select(1, v));
    tokens.push_back(route.visual == VisualRoute::SimAdaptors ? sim_adaptors[static_cast<std::size_t>(v)](feat)
                                                              : real_adaptor(feat));
  }
  tokens.push_back(robot ? state_encoder_robot(state) : state_encoder_human(state));
  auto obs = torch::stack(tokens, 1);
  auto act = robot ? action_projector_robot(z) : action_projector_human(z);
  auto h = backbone(obs, act, t);
  return robot ? head_robot(h) : head_human(h);
}

// ---- bundle ----------------------------------------------------------------------

std::map<std::string, torch::Tensor> PolicyBundle::named_parameters() const {
  std::map<std::string, torch::Tensor> out;
  for (const auto& p : net->named_parameters()) out[p.key()] = p.value();
  return out;
}

std::int64_t PolicyBundle::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : net->parameters()) n += p.numel();
  return n;
}

namespace {

std::uint64_t tensor_hash(const torch::Tensor& t) {
  auto c = t.detach().contiguous();
  const auto* bytes = static_cast<const std::uint8_t*>(c.data_ptr());
  return fnv1a64({bytes, static_cast<std::size_t>(c.numel() * c.element_size())});
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool is_layer_norm(const std::string& name) {
  const auto last = name.rfind('.');
  const auto prev = name.rfind('.', last - 1);
  const std::string owner = name.substr(prev == std::string::npos ? 0 : prev + 1, last - (prev == std::string::npos ? 0 : prev + 1));
  return owner.starts_with("ln") || owner.ends_with("_ln");
}

void init_parameter(const std::string& name, torch::Tensor& p, std::uint64_t seed) {
  const auto bytes = std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(name.data()), name.size());
  std::mt19937_64 rng(mix64(seed ^ fnv1a64(bytes)));
  std::vector<double> values(static_cast<std::size_t>(p.numel()));
  const bool bias = name.ends_with(".bias");
  if (is_layer_norm(name)) {
    std::fill(values.begin(), values.end(), bias ? 0.0 : 1.0);
  } else if (name.ends_with("_pos")) {
    std::normal_distribution<double> n(0.0, 0.02);
    for (auto& v : values) v = n(rng);
  } else if (bias) {
    std::fill(values.begin(), values.end(), 0.0);
  } else {
    const double fan_in = static_cast<double>(p.numel() / p.size(0));
    const double bound = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : values) v = u(rng);
  }
  torch::NoGradGuard g;
  p.copy_(torch::from_blob(values.data(), p.sizes(), torch::kFloat64).to(p.scalar_type()));
}

torch::ScalarType dtype_of(const PolicyConfig& c) { return c.double_precision ? torch::kFloat64 : torch::kFloat32; }

}  // namespace

std::map<std::string, std::uint64_t> PolicyBundle::parameter_checksums() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& [name, t] : named_parameters()) out[name] = tensor_hash(t);
  return out;
}

std::uint64_t PolicyBundle::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, c] : parameter_checksums()) {
    h = mix64(h ^ c);
    const auto bytes = std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(name.data()), name.size());
    h = fnv1a64(bytes, h);
  }
  return h;
}

PolicyBundle init_policy(const PolicyConfig& config, std::uint64_t seed) {
  config.check();
  PolicyBundle b;
  b.config = config;
  b.net = PolicyNet(config);
  b.net->to(dtype_of(config));
  for (auto& [name, p] : b.named_parameters()) init_parameter(name, p, seed);
  return b;
}

void reinitialize_modules(PolicyBundle& bundle, const std::set<std::string>& modules, std::uint64_t seed) {
  for (auto& [name, p] : bundle.named_parameters())
    if (modules.contains(module_of(name))) init_parameter(name, p, seed);
}

// ---- batches ---------------------------------------------------------------------

torch::Tensor frames_to_tensor(const std::vector<const Frame*>& frames, torch::ScalarType dtype) {
  if (frames.empty()) throw ArgumentError("empty frame batch");
  const auto V = static_cast<std::int64_t>(frames[0]->size());
  const std::int64_t H = (*frames[0])[0].height, W = (*frames[0])[0].width;
  const auto B = static_cast<std::int64_t>(frames.size());
  std::vector<float> buf(static_cast<std::size_t>(B * V * 3 * H * W));
  std::size_t i = 0;
  for (const Frame* f : frames) {
    if (static_cast<std::int64_t>(f->size()) != V) throw ConfigError("frames disagree on the number of views");
    for (const Image& img : *f) {
      if (img.height != H || img.width != W) throw ConfigError("frames disagree on the image size");
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < H; ++y)
          for (int x = 0; x < W; ++x) buf[i++] = static_cast<float>(img.at(y, x, c)) / 255.0f;
    }
  }
  return torch::from_blob(buf.data(), {B, V, 3, H, W}, torch::kFloat32).to(dtype).clone();
}

BatchTensors make_batch(const PolicyBundle& bundle, const std::vector<const TrainingSample*>& samples) {
  if (samples.empty()) throw ArgumentError("empty batch");
  const DomainTag domain = samples[0]->domain;
  for (const auto* s : samples) {
    if (s->domain != domain) {
      throw RoutingError("batch mixes " + std::string(to_string(domain)) + " and " + std::string(to_string(s->domain)) +
                         " samples; split it per domain first");
    }
  }
  const auto& c = bundle.config;
  const EmbodimentBranch e = embodiment_of(domain);
  const auto& sn = bundle.norm.state(e);
  const auto& an = bundle.norm.action(e);
  const auto B = static_cast<std::int64_t>(samples.size());
  const auto d_s = sn.lo.size();
  const auto d_a = an.lo.size();
  const auto Hc = samples[0]->action_chunk.rows();
  if (Hc != c.horizon) throw ConfigError("sample horizon does not match policy.horizon");

  std::vector<double> st(static_cast<std::size_t>(B * d_s)), ac(static_cast<std::size_t>(B * Hc * d_a));
  std::vector<const Frame*> frames;
  for (std::int64_t b = 0; b < B; ++b) {
    const auto* s = samples[static_cast<std::size_t>(b)];
    if (s->state.size() != d_s || s->action_chunk.cols() != d_a) {
      throw ConfigError("sample dims do not match the " + std::string(to_string(domain)) + " normalization statistics");
    }
    const Eigen::VectorXd ns = sn.normalize(s->state);
    for (Eigen::Index i = 0; i < d_s; ++i) st[static_cast<std::size_t>(b * d_s + i)] = ns(i);
    for (Eigen::Index r = 0; r < Hc; ++r) {
      const Eigen::VectorXd na = an.normalize(s->action_chunk.row(r).transpose());
      for (Eigen::Index i = 0; i < d_a; ++i) ac[static_cast<std::size_t>((b * Hc + r) * d_a + i)] = na(i);
    }
    frames.push_back(&s->observation);
  }
  const auto dt = dtype_of(c);
  BatchTensors out;
  out.domain = domain;
  out.images = frames_to_tensor(frames, dt);
  out.state = torch::from_blob(st.data(), {B, d_s}, torch::kFloat64).to(dt).clone();
  out.actions = torch::from_blob(ac.data(), {B, Hc, d_a}, torch::kFloat64).to(dt).clone();
  return out;
}

BatchTensors make_batch(const PolicyBundle& bundle, const std::vector<TrainingSample>& samples) {
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return make_batch(bundle, ptrs);
}

torch::Tensor predict_noise(const PolicyBundle& bundle, const BatchTensors& batch, const torch::Tensor& z_t,
                            const torch::Tensor& t) {
  return bundle.net.ptr()->forward(batch.images, batch.state, z_t, t, route_for(batch.domain));
}

torch::Tensor predict_noise(const PolicyBundle& bundle, const std::vector<TrainingSample>& batch,
                            const torch::Tensor& z_t, const torch::Tensor& t) {
  return predict_noise(bundle, make_batch(bundle, batch), z_t, t);
}

// ---- recombination ------------------------------------------------------------------

PolicyBundle recombine_for_real(const PolicyBundle& pre) {
  if (!pre.net) throw StructuralError("recombination needs a constructed bundle");
  if (!pre.config.has_sim_adaptors) throw StructuralError("bundle has no sim adaptors; it was already recombined");
  if (!pre.config.has_human_branch) throw StructuralError("bundle has no human branch; it was already recombined");
  PolicyBundle out;
  out.config = pre.config;
  out.config.has_sim_adaptors = false;
  out.config.has_human_branch = false;
  out.net = PolicyNet(out.config);
  out.net->to(dtype_of(out.config));
  out.norm = pre.norm;
  const auto src = pre.named_parameters();
  torch::NoGradGuard g;
  for (auto& [name, p] : out.named_parameters()) {
    auto it = src.find(name);
    if (it == src.end()) throw StructuralError("pretrained bundle is missing parameter '" + name + "'");
    p.copy_(it->second);
  }
  if (!pre.net->is_training()) out.net->eval();
  return out;
}

// ---- checkpoints ----------------------------------------------------------------------

namespace {

void put_norm(Container& c, const std::string& key, const std::optional<AffineNorm>& n) {
  if (!n) return;
  const auto d = static_cast<std::uint64_t>(n->lo.size());
  c.set_array("norm/" + key + "/lo", {d}, Container::F64Array(n->lo.data(), n->lo.data() + d));
  c.set_array("norm/" + key + "/hi", {d}, Container::F64Array(n->hi.data(), n->hi.data() + d));
}

std::optional<AffineNorm> get_norm(const Container& c, const std::string& key) {
  if (!c.has_array("norm/" + key + "/lo")) return std::nullopt;
  const auto& lo = c.get<double>("norm/" + key + "/lo");
  const auto& hi = c.get<double>("norm/" + key + "/hi");
  AffineNorm n;
  n.lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), static_cast<Eigen::Index>(lo.size()));
  n.hi = Eigen::Map<const Eigen::VectorXd>(hi.data(), static_cast<Eigen::Index>(hi.size()));
  return n;
}

}  // namespace

void save_policy(const PolicyBundle& b, const std::filesystem::path& path) {
  Container c;
  c.set_meta("kind", "policy");
  c.set_meta("checkpoint_version", std::to_string(kCheckpointVersion));
  c.set_meta("config", b.config.to_json().dump());
  for (const auto& [name, t] : b.named_parameters()) {
    auto p = t.detach().contiguous().cpu();
    std::vector<std::uint64_t> shape;
    for (auto s : p.sizes()) shape.push_back(static_cast<std::uint64_t>(s));
    if (p.scalar_type() == torch::kFloat64) {
      const double* d = p.data_ptr<double>();
      c.set_array("param/" + name, shape, Container::F64Array(d, d + p.numel()));
    } else {
      const float* d = p.data_ptr<float>();
      c.set_array("param/" + name, shape, Container::F32Array(d, d + p.numel()));
    }
  }
  put_norm(c, "robot_state", b.norm.robot_state);
  put_norm(c, "robot_action", b.norm.robot_action);
  put_norm(c, "human_state", b.norm.human_state);
  put_norm(c, "human_action", b.norm.human_action);
  c.save(path);
}

PolicyBundle load_policy(const std::filesystem::path& path) {
  const Container c = Container::load(path);
  const std::string where = "checkpoint '" + path.string() + "'";
  if (!c.has_meta("kind") || c.meta("kind") != "policy") throw FormatError(where + " is not a policy checkpoint");
  if (c.meta("checkpoint_version") != std::to_string(kCheckpointVersion)) {
    throw FormatError(where + " has version " + c.meta("checkpoint_version") + ", this build reads version " +
                      std::to_string(kCheckpointVersion));
  }
  PolicyBundle b;
  try {
    b.config = PolicyConfig::from_json(json::parse(c.meta("config")));
  } catch (const json::exception& e) {
    throw FormatError(where + ": malformed config block: " + e.what());
  }
  b.net = PolicyNet(b.config);
  b.net->to(dtype_of(b.config));
  torch::NoGradGuard g;
  std::size_t loaded = 0;
  for (auto& [name, p] : b.named_parameters()) {
    const std::string key = "param/" + name;
    if (!c.has_array(key)) throw FormatError(where + " is missing parameter '" + name + "'");
    const auto& arr = c.array(key);
    std::vector<std::int64_t> shape(arr.shape.begin(), arr.shape.end());
    if (!p.sizes().equals(shape)) throw FormatError(where + ": shape mismatch for '" + name + "'");
    if (p.scalar_type() == torch::kFloat64) {
      auto v = c.get<double>(key);
      p.copy_(torch::from_blob(v.data(), shape, torch::kFloat64));
    } else {
      auto v = c.get<float>(key);
      p.copy_(torch::from_blob(v.data(), shape, torch::kFloat32));
    }
    ++loaded;
  }
  std::size_t stored = 0;
  for (const auto& [k, _] : c.arrays()) stored += k.starts_with("param/");
  if (stored != loaded) throw FormatError(where + " holds parameters this configuration does not define");
  b.norm.robot_state = get_norm(c, "robot_state");
  b.norm.robot_action = get_norm(c, "robot_action");
  b.norm.human_state = get_norm(c, "human_state");
  b.norm.human_action = get_norm(c, "human_action");
  b.net->eval();
  return b;
}

}  // namespace simhum
