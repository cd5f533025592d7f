#include "simhum/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "simhum/config.hpp"
#include "simhum/errors.hpp"
#include "simhum/pipeline.hpp"
#include "simhum/text.hpp"

namespace simhum {

namespace {

constexpr double kPi = std::numbers::pi;

// Workspace-bounded clamp used by the dynamics.
double clamp_ws(double v) { return std::clamp(v, -1.0, 1.0); }

Rgb parse_rgb(const std::string& text, const std::string& key) {
  const auto parts = split(text, ',');
  if (parts.size() != 3) throw ConfigError(key + ": expected r,g,b");
  return {parse_double(parts[0], key), parse_double(parts[1], key), parse_double(parts[2], key)};
}

Shape parse_shape(const std::string& s) {
  static const std::map<std::string, Shape> names = {
      {"disc", Shape::Disc},   {"square", Shape::Square}, {"triangle", Shape::Triangle},
      {"ring", Shape::Ring},   {"cross", Shape::Cross},   {"bar", Shape::Bar},
      {"box", Shape::Box},     {"lid", Shape::Lid},       {"button", Shape::Button}};
  auto it = names.find(s);
  if (it == names.end()) throw ConfigError("unknown shape '" + s + "'");
  return it->second;
}

TextureKind parse_texture_kind(const std::string& s) {
  if (s == "plain") return TextureKind::Plain;
  if (s == "checker") return TextureKind::Checker;
  if (s == "stripes") return TextureKind::Stripes;
  if (s == "noise") return TextureKind::Noise;
  if (s == "wrinkle") return TextureKind::Wrinkle;
  throw ConfigError("unknown texture kind '" + s + "'");
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lattice(std::int64_t ix, std::int64_t iy, std::uint64_t salt) {
  const auto h = mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL ^ mix64(static_cast<std::uint64_t>(iy) + salt));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(double x, double y, std::uint64_t salt) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = lattice(ix, iy, salt), b = lattice(ix + 1, iy, salt);
  const double c = lattice(ix, iy + 1, salt), d = lattice(ix + 1, iy + 1, salt);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

Rgb lerp(const Rgb& a, const Rgb& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb texture_color(const Texture& tex, double x, double y) {
  const double s = tex.scale;
  switch (tex.kind) {
    case TextureKind::Plain:
      return tex.primary;
    case TextureKind::Checker: {
      const auto k = static_cast<std::int64_t>(std::floor(x / s)) + static_cast<std::int64_t>(std::floor(y / s));
      return (k % 2 == 0) ? tex.primary : tex.secondary;
    }
    case TextureKind::Stripes: {
      const auto k = static_cast<std::int64_t>(std::floor((x + 0.5 * y) / s));
      return (k % 2 == 0) ? tex.primary : tex.secondary;
    }
    case TextureKind::Noise:
      return lerp(tex.primary, tex.secondary, value_noise(x / s, y / s, 17));
    case TextureKind::Wrinkle: {
      const double warp = 0.6 * value_noise(x / (2 * s), y / (2 * s), 91);
      const double v = 0.5 + 0.5 * std::sin(2 * kPi * (x + 0.7 * std::sin(3.1 * y) + warp) / s);
      return lerp(tex.primary, tex.secondary, v * v);
    }
  }
  return tex.primary;
}

Rgb sim_palette(const Rgb& c) { return {0.6 * c.r + 70.0, 0.6 * c.g + 45.0, 0.6 * c.b + 25.0}; }

constexpr Rgb kSimBackground{95, 105, 125};
constexpr Rgb kGripperColor{70, 70, 78};
constexpr Rgb kSkinColor{225, 175, 145};
constexpr Rgb kFingertipColor{200, 140, 115};

// Local coordinates of world point q in the frame of pose p.
Eigen::Vector2d to_local(const Pose2& p, const Eigen::Vector2d& q) {
  return Eigen::Rotation2Dd(-p.theta) * (q - p.translation);
}

// Returns the fill colour of body at world point q, if covered.
bool body_covers(const Body& b, const Eigen::Vector2d& q, Rgb& out) {
  const Eigen::Vector2d p = to_local(b.pose, q);
  const double r = b.size;
  const double ax = std::abs(p.x()), ay = std::abs(p.y());
  switch (b.shape) {
    case Shape::Disc:
      if (p.norm() > r) return false;
      out = b.color;
      return true;
    case Shape::Ring: {
      const double n = p.norm();
      if (n > r || n < 0.55 * r) return false;
      out = b.color;
      return true;
    }
    case Shape::Square:
      if (ax > r || ay > r) return false;
      out = b.color;
      return true;
    case Shape::Triangle:
      if (p.y() < -0.5 * r || p.y() > r - 1.5 * ax) return false;
      out = b.color;
      return true;
    case Shape::Cross:
      if (!((ax <= r && ay <= 0.3 * r) || (ay <= r && ax <= 0.3 * r))) return false;
      out = b.color;
      return true;
    case Shape::Bar:
      if (ax > b.length + r || ay > r) return false;
      out = (ax > b.length - r) ? Rgb{b.color.r * 0.7, b.color.g * 0.7, b.color.b * 0.7} : b.color;
      return true;
    case Shape::Box:
      if (ax > r || ay > r) return false;
      out = (ax > 0.65 * r || ay > 0.65 * r) ? b.color : Rgb{b.color.r * 0.55, b.color.g * 0.55, b.color.b * 0.55};
      return true;
    case Shape::Lid:
      if (ax > r || ay > r) return false;
      out = b.color;
      return true;
    case Shape::Button:
      if (p.norm() > r) return false;
      out = p.norm() < 0.5 * r ? Rgb{std::min(255.0, b.color.r + 40), std::min(255.0, b.color.g + 40),
                                     std::min(255.0, b.color.b + 40)}
                                : b.color;
      return true;
  }
  return false;
}

bool effector_covers(const Embodiment& body, const EffectorView& e, const Eigen::Vector2d& q, Rgb& out) {
  if (body.kind == EmbodimentKind::Gripper) {
    const Eigen::Vector2d p = to_local(e.pose, q);
    const double gap = e.closed ? 0.035 : 0.075;
    for (double side : {-1.0, 1.0}) {
      if (std::abs(p.x() - side * gap) <= 0.018 && std::abs(p.y()) <= 0.04) {
        out = kGripperColor;
        return true;
      }
    }
    if (std::abs(p.x()) <= gap + 0.018 && std::abs(p.y() + 0.06) <= 0.02) {
      out = kGripperColor;
      return true;
    }
    return false;
  }
  for (const auto& tip : e.fingertips) {
    if ((q - tip).norm() <= 0.022) {
      out = kFingertipColor;
      return true;
    }
  }
  const Eigen::Vector2d p = to_local(e.pose, q);
  if ((p - Eigen::Vector2d(0.0, -0.07)).norm() <= 0.05) {
    out = kSkinColor;
    return true;
  }
  return false;
}

std::vector<Eigen::Vector2d> grasp_points(const Body& b) {
  if (b.shape == Shape::Bar) {
    const Eigen::Rotation2Dd rot(b.pose.theta);
    return {b.pose.translation + rot * Eigen::Vector2d(-b.length, 0.0),
            b.pose.translation + rot * Eigen::Vector2d(b.length, 0.0)};
  }
  return {b.pose.translation};
}

double dist(const Body& a, const Body& b) { return (a.pose.translation - b.pose.translation).norm(); }

std::uint8_t to_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

// ---- catalog -------------------------------------------------------------

Catalog Catalog::builtin() {
  Catalog c;
  auto objects = [](Rgb left, Rgb right, Rgb button, Rgb bar, Rgb box, Rgb lid, Rgb item, double scale,
                    bool held) {
    ObjectInstance o;
    o.role_colors = {{"disc_left", left}, {"disc_right", right}, {"button", button}, {"bar", bar},
                     {"box", box},        {"lid", lid},          {"item", item}};
    o.size_scale = scale;
    o.held_out = held;
    return o;
  };
  c.objects["base"] = objects({205, 45, 45}, {45, 70, 205}, {235, 140, 20}, {30, 140, 60}, {120, 80, 40},
                              {200, 170, 110}, {150, 50, 170}, 1.0, false);
  c.objects["obj_a"] = objects({175, 25, 70}, {30, 110, 190}, {225, 110, 40}, {60, 160, 80}, {100, 65, 35},
                               {215, 185, 130}, {170, 70, 190}, 0.9, false);
  c.objects["obj_b"] = objects({225, 80, 55}, {70, 60, 175}, {245, 165, 55}, {20, 120, 90}, {135, 95, 55},
                               {185, 155, 95}, {130, 40, 150}, 1.1, false);
  c.objects["obj_novel"] = objects({240, 50, 110}, {20, 150, 210}, {250, 120, 80}, {90, 170, 40}, {95, 55, 45},
                                   {220, 200, 150}, {190, 90, 210}, 1.0, true);

  c.distractors["none"] = DistractorSet{};
  c.distractors["clutter_a"] =
      DistractorSet{{{Shape::Square, {220, 210, 60}}, {Shape::Triangle, {60, 170, 80}}, {Shape::Ring, {140, 120, 100}}},
                    0.06,
                    false};
  c.distractors["clutter_b"] =
      DistractorSet{{{Shape::Cross, {120, 60, 150}}, {Shape::Square, {40, 150, 140}}, {Shape::Ring, {130, 130, 50}}},
                    0.06,
                    false};
  c.distractors["clutter_novel"] = DistractorSet{{{Shape::Square, {245, 245, 245}},
                                                  {Shape::Triangle, {30, 30, 30}},
                                                  {Shape::Cross, {230, 130, 180}},
                                                  {Shape::Disc, {150, 90, 60}}},
                                                 0.07,
                                                 true};

  c.lightings["base"] = {{1.0, {1.0, 1.0, 1.0}}, false};
  c.lightings["dim"] = {{0.75, {1.0, 1.0, 1.0}}, false};
  c.lightings["warm"] = {{1.05, {1.1, 0.95, 0.8}}, false};
  c.lightings["cool"] = {{0.95, {0.85, 0.95, 1.15}}, false};
  c.lightings["bright"] = {{1.25, {1.0, 1.0, 1.0}}, false};
  c.lightings["dusk"] = {{0.6, {1.15, 0.85, 0.7}}, true};

  c.backgrounds["base"] = Texture{TextureKind::Plain, {200, 200, 195}, {200, 200, 195}, 0.25, false};
  c.backgrounds["checker"] = Texture{TextureKind::Checker, {190, 180, 160}, {150, 140, 120}, 0.25, false};
  c.backgrounds["stripes"] = Texture{TextureKind::Stripes, {170, 190, 200}, {130, 150, 170}, 0.2, false};
  c.backgrounds["noise"] = Texture{TextureKind::Noise, {185, 185, 185}, {115, 115, 115}, 0.1, false};
  c.backgrounds["wood"] = Texture{TextureKind::Noise, {175, 135, 95}, {135, 95, 60}, 0.3, false};
  c.backgrounds["wrinkle_dark"] = Texture{TextureKind::Wrinkle, {115, 108, 125}, {70, 65, 82}, 0.15, true};
  c.backgrounds["wrinkle_color"] = Texture{TextureKind::Wrinkle, {160, 190, 150}, {100, 140, 110}, 0.12, true};

  c.regions["seen"] = Region{-0.675, -0.15, -0.35, 0.175};
  c.regions["wide"] = Region{-0.85, -0.15, -0.35, 0.35};
  return c;
}

Catalog Catalog::load(const std::filesystem::path& path) {
  Catalog c = builtin();
  const auto cfg = KeyValueConfig::load(path);
  auto ids = [&](const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& [k, v] : cfg.with_prefix(prefix)) {
      const auto id = k.substr(0, k.find('.'));
      if (out.empty() || out.back() != id) out.push_back(id);
    }
    return out;
  };
  for (const auto& id : ids("background.")) {
    const std::string p = "background." + id + ".";
    Texture t;
    t.kind = parse_texture_kind(cfg.get_string(p + "kind", "plain"));
    t.primary = parse_rgb(cfg.get_string(p + "primary"), p + "primary");
    t.secondary = parse_rgb(cfg.get_string(p + "secondary", cfg.get_string(p + "primary")), p + "secondary");
    t.scale = cfg.get_double(p + "scale", 0.25);
    t.held_out = cfg.get_bool(p + "held_out", false);
    c.backgrounds[id] = t;
  }
  for (const auto& id : ids("lighting.")) {
    const std::string p = "lighting." + id + ".";
    LightingPreset l;
    l.lighting.gain = cfg.get_double(p + "gain", 1.0);
    l.lighting.tint = parse_rgb(cfg.get_string(p + "tint", "1,1,1"), p + "tint");
    l.held_out = cfg.get_bool(p + "held_out", false);
    c.lightings[id] = l;
  }
  for (const auto& id : ids("distractors.")) {
    const std::string p = "distractors." + id + ".";
    DistractorSet d;
    d.size = cfg.get_double(p + "size", 0.06);
    d.held_out = cfg.get_bool(p + "held_out", false);
    for (const auto& item : split(cfg.get_string(p + "items", ""), ';')) {
      const auto t = trim(item);
      if (t.empty()) continue;
      const auto colon = t.find(':');
      if (colon == std::string::npos) throw ConfigError(p + "items: expected shape:r,g,b entries");
      d.items.emplace_back(parse_shape(trim(t.substr(0, colon))), parse_rgb(t.substr(colon + 1), p + "items"));
    }
    c.distractors[id] = d;
  }
  for (const auto& id : ids("object.")) {
    const std::string p = "object." + id + ".";
    ObjectInstance o = c.objects.contains(id) ? c.objects[id] : c.objects["base"];
    for (const auto& [k, v] : cfg.with_prefix(p + "color.")) o.role_colors[k] = parse_rgb(v, p + "color." + k);
    o.size_scale = cfg.get_double(p + "size_scale", o.size_scale);
    o.held_out = cfg.get_bool(p + "held_out", false);
    c.objects[id] = o;
  }
  for (const auto& id : ids("region.")) {
    const std::string p = "region." + id + ".";
    c.regions[id] = Region{cfg.get_double(p + "x0"), cfg.get_double(p + "x1"), cfg.get_double(p + "y0"),
                           cfg.get_double(p + "y1")};
  }
  return c;
}

void Catalog::check(const FactorConfig& f) const {
  if (!objects.contains(f.obj)) throw ConfigError("unregistered object instance '" + f.obj + "'");
  if (!distractors.contains(f.dist)) throw ConfigError("unregistered distractor set '" + f.dist + "'");
  if (!lightings.contains(f.light)) throw ConfigError("unregistered lighting preset '" + f.light + "'");
  if (!backgrounds.contains(f.bg)) throw ConfigError("unregistered background '" + f.bg + "'");
  auto it = regions.find(f.init);
  if (it == regions.end()) throw ConfigError("unregistered init region '" + f.init + "'");
  if (!(it->second.width() > 0.0 && it->second.height() > 0.0)) {
    throw ConfigError("init region '" + f.init + "' has no area");
  }
  if (f.dist_count < 0) throw ConfigError("distractor count must be >= 0");
  if (f.dist_count > 0 && distractors.at(f.dist).items.empty()) {
    throw ConfigError("distractor set '" + f.dist + "' is empty but count is " + std::to_string(f.dist_count));
  }
}

std::vector<std::string> Catalog::training_ids(const std::string& factor) const {
  std::vector<std::string> out;
  auto collect = [&](const auto& map) {
    for (const auto& [id, entry] : map)
      if (!entry.held_out) out.push_back(id);
  };
  if (factor == "obj") collect(objects);
  else if (factor == "dist") collect(distractors);
  else if (factor == "light") collect(lightings);
  else if (factor == "bg") collect(backgrounds);
  else if (factor == "init") {
    for (const auto& [id, r] : regions) out.push_back(id);
  } else {
    throw ConfigError("unknown factor '" + factor + "'");
  }
  return out;
}

// ---- scene ---------------------------------------------------------------

const Body& Scene::object(const std::string& role) const {
  for (const auto& b : objects)
    if (b.role == role) return b;
  throw ArgumentError("scene has no object with role '" + role + "'");
}

Body& Scene::object(const std::string& role) {
  for (auto& b : objects)
    if (b.role == role) return b;
  throw ArgumentError("scene has no object with role '" + role + "'");
}

// ---- embodiment ----------------------------------------------------------

VectorLayout Embodiment::layout() const {
  return kind == EmbodimentKind::Gripper ? robot_layout(effectors) : human_layout(effectors, fingertips);
}

namespace {

int block_size(const Embodiment& body) { return body.state_dim() / body.effectors; }

Eigen::Vector2d fingertip_home(int k, int n, double radius) {
  const double angle = kPi / 3.0 + (n > 1 ? k * (kPi / 3.0) / (n - 1) : 0.0);
  return {radius * std::cos(angle), radius * std::sin(angle)};
}

}  // namespace

void set_grip(const Embodiment& body, Eigen::Ref<Eigen::VectorXd> vec, int effector, bool closed) {
  const int o = effector * block_size(body);
  if (body.kind == EmbodimentKind::Gripper) {
    vec(o + 3) = closed ? 1.0 : 0.0;
    return;
  }
  const double r = closed ? kHandClosedRadius : kHandOpenRadius;
  for (int k = 0; k < body.fingertips; ++k) {
    const auto tip = fingertip_home(k, body.fingertips, r);
    vec(o + 3 + 2 * k) = tip.x();
    vec(o + 4 + 2 * k) = tip.y();
  }
}

Eigen::VectorXd initial_state(const Embodiment& body) {
  Eigen::VectorXd s = Eigen::VectorXd::Zero(body.state_dim());
  const int bs = block_size(body);
  for (int e = 0; e < body.effectors; ++e) {
    const double x = body.effectors == 1 ? 0.0 : -0.5 + 1.0 * e / (body.effectors - 1);
    s(e * bs) = x;
    s(e * bs + 1) = -0.8;
    s(e * bs + 2) = 0.0;
    set_grip(body, s, e, false);
  }
  return s;
}

std::vector<EffectorView> effector_views(const Embodiment& body, const Eigen::VectorXd& state) {
  if (state.size() != body.state_dim()) throw ArgumentError("state dim does not match embodiment");
  std::vector<EffectorView> out;
  const int bs = block_size(body);
  for (int e = 0; e < body.effectors; ++e) {
    EffectorView v;
    const int o = e * bs;
    v.pose = pose_at(state, o);
    if (body.kind == EmbodimentKind::Gripper) {
      v.closed = state(o + 3) >= 0.5;
    } else {
      double mean_r = 0.0;
      const Eigen::Rotation2Dd rot(v.pose.theta);
      for (int k = 0; k < body.fingertips; ++k) {
        const Eigen::Vector2d local(state(o + 3 + 2 * k), state(o + 4 + 2 * k));
        mean_r += local.norm();
        v.fingertips.push_back(v.pose.translation + rot * local);
      }
      mean_r /= body.fingertips;
      v.closed = mean_r < 0.5 * (kHandOpenRadius + kHandClosedRadius);
    }
    out.push_back(std::move(v));
  }
  return out;
}

// ---- tasks ---------------------------------------------------------------

namespace {

bool held_by(const Body& b, int e) { return (b.holders >> e) & 1U; }

}  // namespace

TaskSpec TaskSpec::get(const std::string& id) {
  TaskSpec t;
  t.id = id;
  using S = const Scene&;
  using B = const Embodiment&;
  using X = const Eigen::VectorXd&;
  if (id == kStackDiscs) {
    t.milestone_names = {"grasp_left", "grasp_both", "stacked"};
    t.milestones = {
        [](S s, B, X) { return held_by(s.object("disc_left"), 0); },
        [](S s, B, X) { return held_by(s.object("disc_left"), 0) && held_by(s.object("disc_right"), 1); },
        [](S s, B, X) {
          const auto& l = s.object("disc_left");
          return l.holders == 0 && dist(l, s.object("disc_right")) < 0.08;
        }};
  } else if (id == kPressButton) {
    t.milestone_names = {"approach", "press"};
    t.milestones = {
        [](S s, B body, X x) {
          const auto v = effector_views(body, x);
          return (v[0].pose.translation - s.object("button").pose.translation).norm() < 0.15;
        },
        [](S s, B body, X x) {
          const auto v = effector_views(body, x);
          const auto& b = s.object("button");
          return v[0].closed && (v[0].pose.translation - b.pose.translation).norm() < 0.05 &&
                 std::abs(wrap_angle(v[0].pose.theta - b.pose.theta)) < 0.3;
        }};
  } else if (id == kLiftBar) {
    t.milestone_names = {"grasp_both_ends", "lifted"};
    t.milestones = {[](S s, B, X) { return s.object("bar").holders == 3; },
                    [](S s, B, X) {
                      const auto& b = s.object("bar");
                      return b.holders == 3 && b.pose.translation.y() - b.home.translation.y() >= 0.25;
                    }};
  } else if (id == kOpenLidInsert) {
    t.milestone_names = {"grasp_lid", "lid_open", "inserted"};
    t.milestones = {[](S s, B, X) { return s.object("lid").holders != 0; },
                    [](S s, B, X) { return dist(s.object("lid"), s.object("box")) > 0.25; },
                    [](S s, B, X) {
                      const auto& item = s.object("item");
                      const auto& box = s.object("box");
                      return item.holders == 0 && dist(item, box) < 0.07 && dist(s.object("lid"), box) > 0.25;
                    }};
  } else {
    throw ConfigError("unknown task '" + id + "'");
  }
  return t;
}

std::vector<std::string> TaskSpec::all_ids() { return {kStackDiscs, kPressButton, kLiftBar, kOpenLidInsert}; }

Scene generate_scene_at(const TaskSpec& task, const FactorConfig& factors, const Catalog& catalog,
                        const Eigen::Vector2d& left, const Eigen::Vector2d& right, std::mt19937_64& rng) {
  catalog.check(factors);
  const auto& inst = catalog.objects.at(factors.obj);
  Scene s;
  s.task = task.id;
  s.background_id = factors.bg;
  s.background = catalog.backgrounds.at(factors.bg);
  s.lighting = catalog.lightings.at(factors.light).lighting;

  auto make = [&](const std::string& role, Shape shape, Eigen::Vector2d pos, double size, bool graspable) {
    Body b;
    b.role = role;
    b.shape = shape;
    b.color = inst.role_colors.at(role);
    b.pose.translation = pos;
    b.size = size * inst.size_scale;
    b.graspable = graspable;
    return b;
  };

  if (task.id == kStackDiscs) {
    s.objects.push_back(make("disc_left", Shape::Disc, left, 0.09, true));
    s.objects.push_back(make("disc_right", Shape::Disc, right, 0.09, true));
  } else if (task.id == kPressButton) {
    auto b = make("button", Shape::Button, left, 0.06, false);
    b.pose.theta = std::uniform_real_distribution<double>(-0.4, 0.4)(rng);
    s.objects.push_back(b);
  } else if (task.id == kLiftBar) {
    auto b = make("bar", Shape::Bar, Eigen::Vector2d(0.0, left.y()), 0.035, true);
    b.size = 0.035;
    b.length = std::abs(left.x());
    b.bimanual = true;
    s.objects.push_back(b);
  } else if (task.id == kOpenLidInsert) {
    s.objects.push_back(make("box", Shape::Box, left, 0.1, false));
    s.objects.push_back(make("lid", Shape::Lid, left, 0.085, true));
    s.objects.push_back(make("item", Shape::Disc, right, 0.05, true));
  } else {
    throw ConfigError("unknown task '" + task.id + "'");
  }
  for (auto& b : s.objects) b.home = b.pose;

  const auto& dset = catalog.distractors.at(factors.dist);
  std::uniform_real_distribution<double> ux(-0.95, 0.95), uy(-0.55, 0.9);
  std::uniform_int_distribution<std::size_t> pick(0, dset.items.empty() ? 0 : dset.items.size() - 1);
  std::uniform_real_distribution<double> uth(-kPi, kPi);
  for (int i = 0; i < factors.dist_count; ++i) {
    Body d;
    const auto& [shape, color] = dset.items[pick(rng)];
    d.role = "distractor";
    d.shape = shape;
    d.color = color;
    d.size = dset.size;
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      d.pose.translation = Eigen::Vector2d(ux(rng), uy(rng));
      d.pose.theta = uth(rng);
      placed = true;
      for (const auto& o : s.objects) {
        for (const auto& gp : grasp_points(o)) {
          if ((gp - d.pose.translation).norm() < o.size + d.size + 0.06) placed = false;
        }
        if (o.shape == Shape::Bar && std::abs(d.pose.translation.y() - o.pose.translation.y()) < d.size + 0.06 &&
            std::abs(d.pose.translation.x()) < o.length + d.size) {
          placed = false;
        }
      }
      for (const auto& o : s.distractors) {
        if (dist(o, d) < o.size + d.size + 0.01) placed = false;
      }
    }
    if (!placed) throw GenerationError("could not place distractor " + std::to_string(i) + " without collision");
    d.home = d.pose;
    s.distractors.push_back(d);
  }
  return s;
}

Scene generate_scene(const TaskSpec& task, const FactorConfig& factors, const Catalog& catalog, std::mt19937_64& rng) {
  catalog.check(factors);
  const Region region = catalog.regions.at(factors.init);
  const Region mirror = region.mirrored();
  std::uniform_real_distribution<double> lx(region.x0, region.x1), ly(region.y0, region.y1);
  std::uniform_real_distribution<double> rx(mirror.x0, mirror.x1), ry(mirror.y0, mirror.y1);
  const Eigen::Vector2d left(lx(rng), ly(rng));
  const Eigen::Vector2d right(rx(rng), ry(rng));
  return generate_scene_at(task, factors, catalog, left, right, rng);
}

// ---- dynamics ------------------------------------------------------------

WorldState step(const Embodiment& body, const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                const Scene& scene) {
  if (action.size() != body.action_dim()) {
    throw StepError("action has " + std::to_string(action.size()) + " entries, embodiment expects " +
                    std::to_string(body.action_dim()));
  }
  if (state.size() != body.state_dim()) throw StepError("state dim does not match embodiment");
  if (!action.allFinite()) throw StepError("action contains NaN or infinity");

  WorldState out{scene, state};
  const int bs = block_size(body);
  const auto before = effector_views(body, state);

  for (int e = 0; e < body.effectors; ++e) {
    const int o = e * bs;
    Pose2 p = compose(before[static_cast<std::size_t>(e)].pose, pose_at(action, o));
    p.translation = p.translation.unaryExpr(&clamp_ws);
    out.body_state(o) = p.translation.x();
    out.body_state(o + 1) = p.translation.y();
    out.body_state(o + 2) = p.theta;
    if (body.kind == EmbodimentKind::Gripper) {
      out.body_state(o + 3) = action(o + 3) >= 0.5 ? 1.0 : 0.0;
    } else {
      out.body_state.segment(o + 3, bs - 3) = action.segment(o + 3, bs - 3);
    }
  }
  const auto after = effector_views(body, out.body_state);

  // Carry held bodies.
  for (auto& b : out.scene.objects) {
    if (b.holders == 0) continue;
    if (b.bimanual) {
      if (b.holders == 3) {
        Eigen::Vector2d shift = Eigen::Vector2d::Zero();
        for (int e = 0; e < 2; ++e) {
          shift += after[static_cast<std::size_t>(e)].pose.translation - before[static_cast<std::size_t>(e)].pose.translation;
        }
        b.pose.translation += 0.5 * shift;
      }
      continue;
    }
    for (int e = 0; e < body.effectors; ++e) {
      if (held_by(b, e)) {
        b.pose = compose(after[static_cast<std::size_t>(e)].pose, b.grasp_offset[static_cast<std::size_t>(e)]);
        break;
      }
    }
  }

  for (int e = 0; e < body.effectors; ++e) {
    const bool was = before[static_cast<std::size_t>(e)].closed;
    const bool now = after[static_cast<std::size_t>(e)].closed;
    if (was && !now) {
      for (auto& b : out.scene.objects) b.holders &= static_cast<std::uint8_t>(~(1U << e));
    } else if (!was && now) {
      const Pose2& ep = after[static_cast<std::size_t>(e)].pose;
      Body* best = nullptr;
      double best_d = kGraspRadius;
      for (auto& b : out.scene.objects) {
        if (!b.graspable || held_by(b, e)) continue;
        if (!b.bimanual && b.holders != 0) continue;
        for (const auto& gp : grasp_points(b)) {
          const double d = (gp - ep.translation).norm();
          if (d <= best_d) {
            best_d = d;
            best = &b;
          }
        }
      }
      if (best != nullptr) {
        best->holders |= static_cast<std::uint8_t>(1U << e);
        best->grasp_offset[static_cast<std::size_t>(e)] = relative_action(ep, best->pose);
      }
    }
  }
  return out;
}

// ---- rendering -----------------------------------------------------------

Image render(const Scene& scene, const Embodiment& body, const Eigen::VectorXd& state, DomainTag domain,
             const RenderOptions& opt, int view) {
  if (opt.height <= 0 || opt.width <= 0) throw ArgumentError("render resolution must be positive");
  const bool sim = domain == DomainTag::Sim;
  const auto effectors = effector_views(body, state);
  const double half = 1.0 - 0.15 * view;
  const Eigen::Vector2d center(0.0, -0.1 * view);

  // Draw order: distractors, static bodies, held bodies, effectors.
  std::vector<const Body*> order;
  for (const auto& d : scene.distractors) order.push_back(&d);
  for (const auto& b : scene.objects)
    if (b.holders == 0 && b.shape == Shape::Box) order.push_back(&b);
  for (const auto& b : scene.objects)
    if (b.holders == 0 && b.shape != Shape::Box) order.push_back(&b);
  for (const auto& b : scene.objects)
    if (b.holders != 0) order.push_back(&b);

  Image img(opt.height, opt.width);
  std::mt19937_64 noise_rng(mix64(opt.seed ^ (0x5151ULL + static_cast<std::uint64_t>(view))));
  std::normal_distribution<double> noise(0.0, 1.0);
  const bool noisy = !sim && opt.noise_sigma > 0.0;

  for (int y = 0; y < opt.height; ++y) {
    for (int x = 0; x < opt.width; ++x) {
      const Eigen::Vector2d q(center.x() - half + (x + 0.5) * 2.0 * half / opt.width,
                              center.y() + half - (y + 0.5) * 2.0 * half / opt.height);
      Rgb c = sim ? kSimBackground : texture_color(scene.background, q.x(), q.y());
      Rgb fill;
      bool from_body = false;
      for (const Body* b : order) {
        if (body_covers(*b, q, fill)) {
          c = fill;
          from_body = true;
        }
      }
      for (const auto& e : effectors) {
        if (effector_covers(body, e, q, fill)) {
          c = fill;
          from_body = true;
        }
      }
      if (sim) {
        if (from_body) c = sim_palette(c);
      } else if (opt.apply_lighting) {
        const auto& L = scene.lighting;
        c = {c.r * L.tint.r * L.gain, c.g * L.tint.g * L.gain, c.b * L.tint.b * L.gain};
      }
      double v[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < 3; ++ch) {
        if (noisy) v[ch] += opt.noise_sigma * noise(noise_rng);
        img.at(y, x, ch) = to_u8(v[ch]);
      }
    }
  }
  return img;
}

Frame render_frame(const Scene& scene, const Embodiment& body, const Eigen::VectorXd& state, DomainTag domain,
                   const RenderOptions& options) {
  Frame f;
  for (int v = 0; v < options.views; ++v) f.push_back(render(scene, body, state, domain, options, v));
  return f;
}

double mean_abs_pixel_difference(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width) throw ArgumentError("image sizes differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) sum += std::abs(int(a.pixels[i]) - int(b.pixels[i]));
  return sum / static_cast<double>(a.pixels.size());
}

void write_ppm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

// ---- experts -------------------------------------------------------------

namespace {

struct Segment {
  std::vector<Pose2> targets;
  std::vector<bool> grip_end;
};

std::vector<Segment> plan(const TaskSpec& task, const Scene& s, const std::vector<EffectorView>& start) {
  std::vector<Segment> segs;
  auto at = [](const Eigen::Vector2d& p, double th = 0.0) {
    Pose2 q;
    q.translation = p;
    q.theta = th;
    return q;
  };
  const Pose2 l0 = start[0].pose, r0 = start[1].pose;
  if (task.id == kStackDiscs) {
    const Pose2 l = at(s.object("disc_left").pose.translation);
    const Pose2 r = at(s.object("disc_right").pose.translation);
    segs.push_back({{l, r}, {true, false}});
    segs.push_back({{l, r}, {true, true}});
    segs.push_back({{r, r}, {false, true}});
  } else if (task.id == kPressButton) {
    const auto& b = s.object("button");
    const Eigen::Vector2d approach = b.pose.translation + Eigen::Rotation2Dd(b.pose.theta) * Eigen::Vector2d(0, -0.1);
    segs.push_back({{at(approach, b.pose.theta), r0}, {false, false}});
    segs.push_back({{at(b.pose.translation, b.pose.theta), r0}, {true, false}});
  } else if (task.id == kLiftBar) {
    const auto& b = s.object("bar");
    const auto ends = grasp_points(b);
    const Eigen::Vector2d up(0.0, 0.3);
    segs.push_back({{at(ends[0]), at(ends[1])}, {true, true}});
    segs.push_back({{at(ends[0] + up), at(ends[1] + up)}, {true, true}});
  } else if (task.id == kOpenLidInsert) {
    const Eigen::Vector2d lid = s.object("lid").pose.translation;
    const Eigen::Vector2d item = s.object("item").pose.translation;
    const Eigen::Vector2d box = s.object("box").pose.translation;
    const Pose2 lid_away = at(lid + Eigen::Vector2d(0.0, 0.32));
    segs.push_back({{at(lid), at(item)}, {true, true}});
    segs.push_back({{lid_away, at(item)}, {false, true}});
    segs.push_back({{lid_away, at(box)}, {false, false}});
  } else {
    throw ConfigError("no expert for task '" + task.id + "'");
  }
  (void)l0;
  return segs;
}

}  // namespace

ExpertResult scripted_expert(const TaskSpec& task, const Scene& scene, const Embodiment& body,
                             const ExpertOptions& opt, std::mt19937_64& rng) {
  if (body.effectors != 2) throw ConfigError("scripted experts drive exactly two effectors");
  if (is_robot_domain(opt.domain) != (body.kind == EmbodimentKind::Gripper)) {
    throw ConfigError("embodiment does not match the episode domain");
  }
  const double rate = 10.0 / opt.frequency_hz;
  const double vmax = opt.max_speed * rate;
  const double wmax = opt.max_turn * rate;
  const double sigma = opt.noise_sigma * std::sqrt(rate);
  std::normal_distribution<double> noise(0.0, 1.0);

  WorldState ws{scene, initial_state(body)};
  const auto segments = plan(task, scene, effector_views(body, ws.body_state));
  for (const auto& seg : segments) {
    for (const auto& t : seg.targets) {
      if (std::abs(t.translation.x()) > 1.0 || std::abs(t.translation.y()) > 1.0) {
        throw GenerationError("expert target outside the reachable workspace");
      }
    }
  }

  ExpertResult result;
  std::vector<Eigen::VectorXd> states, actions;
  auto record = [&](const Eigen::VectorXd& action) {
    result.trace.push_back(ws);
    states.push_back(ws.body_state);
    actions.push_back(action);
    ws = step(body, ws.body_state, action, ws.scene);
  };
  const int bs = block_size(body);
  auto hold_action = [&]() {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(body.action_dim());
    for (int e = 0; e < body.effectors; ++e) {
      const auto views = effector_views(body, ws.body_state);
      set_grip(body, a, e, views[static_cast<std::size_t>(e)].closed);
    }
    return a;
  };
  std::uniform_int_distribution<int> idle(opt.idle_min, std::max(opt.idle_min, opt.idle_max));
  const int idle_before = opt.idle_max > 0 ? idle(rng) : 0;
  for (int i = 0; i < idle_before; ++i) record(hold_action());

  for (const auto& seg : segments) {
    int guard = 0;
    while (true) {
      const auto views = effector_views(body, ws.body_state);
      bool arrived = true;
      Eigen::VectorXd a = hold_action();
      for (int e = 0; e < body.effectors; ++e) {
        const Pose2& cur = views[static_cast<std::size_t>(e)].pose;
        const Pose2& tgt = seg.targets[static_cast<std::size_t>(e)];
        const Eigen::Vector2d diff = tgt.translation - cur.translation;
        const double dth = wrap_angle(tgt.theta - cur.theta);
        if (diff.norm() == 0.0 && dth == 0.0) continue;
        arrived = false;
        Pose2 next;
        if (diff.norm() <= vmax && std::abs(dth) <= wmax) {
          next = tgt;
        } else {
          const double scale = diff.norm() > vmax ? vmax / diff.norm() : 1.0;
          next.translation = cur.translation + diff * scale;
          if (sigma > 0.0) next.translation += sigma * Eigen::Vector2d(noise(rng), noise(rng));
          next.translation = next.translation.unaryExpr(&clamp_ws);
          next.theta = wrap_angle(cur.theta + std::clamp(dth, -wmax, wmax));
        }
        set_pose(a, e * bs, relative_action(cur, next));
      }
      if (arrived) break;
      if (++guard > 1000) throw GenerationError("expert failed to converge on a waypoint");
      record(a);
    }
    Eigen::VectorXd toggle = hold_action();
    for (int e = 0; e < body.effectors; ++e) set_grip(body, toggle, e, seg.grip_end[static_cast<std::size_t>(e)]);
    record(toggle);
  }
  const int idle_after = opt.idle_max > 0 ? idle(rng) : 0;
  for (int i = 0; i < idle_after; ++i) record(hold_action());
  // Terminal frame with a hold action so the final state is observed.
  record(hold_action());

  Episode& ep = result.episode;
  ep.domain = opt.domain;
  ep.task = task.id;
  ep.frequency_hz = opt.frequency_hz;
  ep.scores_available = true;
  const auto n = static_cast<Eigen::Index>(states.size());
  ep.states.resize(n, body.state_dim());
  ep.actions.resize(n, body.action_dim());
  RenderOptions ropt = opt.render;
  for (Eigen::Index t = 0; t < n; ++t) {
    ep.states.row(t) = states[static_cast<std::size_t>(t)].transpose();
    ep.actions.row(t) = actions[static_cast<std::size_t>(t)].transpose();
    ropt.seed = rng();
    const auto& w = result.trace[static_cast<std::size_t>(t)];
    ep.observations.push_back(render_frame(w.scene, body, w.body_state, opt.domain, ropt));
  }
  if (opt.action_frame == ActionFrame::Absolute) {
    // Raw capture stores the pose reached after each step.
    for (Eigen::Index t = 0; t < n; ++t) {
      Eigen::RowVectorXd row = ep.actions.row(t);
      for (int o : body.layout().pose_offsets) {
        set_pose(row, o, compose(pose_at(ep.states.row(t), o), pose_at(ep.actions.row(t), o)));
      }
      ep.actions.row(t) = row;
    }
    ep.action_frame = ActionFrame::Absolute;
  }
  result.trace.push_back(ws);
  return result;
}

int score_rollout(const std::vector<WorldState>& trace, const TaskSpec& task, const Embodiment& body) {
  if (trace.empty()) throw ArgumentError("cannot score an empty trace");
  int k = 0;
  for (const auto& w : trace) {
    while (k < task.max_score() && task.milestones[static_cast<std::size_t>(k)](w.scene, body, w.body_state)) ++k;
    if (k == task.max_score()) break;
  }
  return k;
}

}  // namespace simhum
