#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "simhum/dataset.hpp"
#include "simhum/pose.hpp"

namespace simhum {

// ---- catalogs ----------------------------------------------------------------

struct Rgb {
  double r = 0, g = 0, b = 0;
};

enum class Shape { Disc, Square, Triangle, Ring, Cross, Bar, Box, Lid, Button };

enum class TextureKind { Plain, Checker, Stripes, Noise, Wrinkle };

struct Texture {
  TextureKind kind = TextureKind::Plain;
  Rgb primary{200, 200, 195};
  Rgb secondary{200, 200, 195};
  double scale = 0.25;  // pattern period in workspace units
  bool held_out = false;
};

struct Lighting {
  double gain = 1.0;
  Rgb tint{1.0, 1.0, 1.0};
};

struct LightingPreset {
  Lighting lighting;
  bool held_out = false;
};

struct DistractorSet {
  std::vector<std::pair<Shape, Rgb>> items;
  double size = 0.07;
  bool held_out = false;
};

// Colours for the task roles of one object instance set.
struct ObjectInstance {
  std::map<std::string, Rgb> role_colors;
  double size_scale = 1.0;
  bool held_out = false;
};

// Rectangle for the left-hand target; right-hand targets use its mirror image
// about x = 0.
struct Region {
  double x0 = -0.675, x1 = -0.15, y0 = -0.35, y1 = 0.175;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  bool contains(const Eigen::Vector2d& p, double tol = 1e-12) const {
    return p.x() >= x0 - tol && p.x() <= x1 + tol && p.y() >= y0 - tol && p.y() <= y1 + tol;
  }
  Region mirrored() const { return {-x1, -x0, y0, y1}; }
};

struct Catalog {
  std::map<std::string, ObjectInstance> objects;
  std::map<std::string, DistractorSet> distractors;
  std::map<std::string, LightingPreset> lightings;
  std::map<std::string, Texture> backgrounds;
  std::map<std::string, Region> regions;

  // Built-in registry: base + three training variants per factor and the
  // held-out OOD entries.
  static Catalog builtin();
  // Declarative catalog file (same key = value format as experiment configs).
  static Catalog load(const std::filesystem::path& path);

  // Throws ConfigError if any id is unregistered or the region is degenerate.
  void check(const FactorConfig& factors) const;
  std::vector<std::string> training_ids(const std::string& factor) const;
};

// ---- scene -----------------------------------------------------------------

struct Body {
  std::string role;
  Shape shape = Shape::Disc;
  Rgb color;
  Pose2 pose;
  Pose2 home;          // pose at scene generation
  double size = 0.1;   // radius / half extent
  double length = 0.0; // bar half length
  bool graspable = false;
  bool bimanual = false;      // moves only while held by both effectors
  std::uint8_t holders = 0;   // bit e set when effector e holds the body
  std::array<Pose2, 2> grasp_offset{};
};

struct Scene {
  std::string task;
  std::vector<Body> objects;
  std::vector<Body> distractors;
  std::string background_id;
  Texture background;
  Lighting lighting;
  Eigen::Vector4d workspace{-1.0, 1.0, -1.0, 1.0};  // x0, x1, y0, y1

  const Body& object(const std::string& role) const;
  Body& object(const std::string& role);
};

// ---- embodiments -------------------------------------------------------------

enum class EmbodimentKind { Gripper, Hand };

struct Embodiment {
  EmbodimentKind kind = EmbodimentKind::Gripper;
  int effectors = 2;
  int fingertips = 4;

  int state_dim() const { return kind == EmbodimentKind::Gripper ? 4 * effectors : (3 + 2 * fingertips) * effectors; }
  int action_dim() const { return state_dim(); }
  VectorLayout layout() const;

  static Embodiment gripper() { return {EmbodimentKind::Gripper, 2, 4}; }
  static Embodiment hand() { return {EmbodimentKind::Hand, 2, 4}; }
  static Embodiment for_domain(DomainTag domain) { return is_robot_domain(domain) ? gripper() : hand(); }
};

// Drawable end-effector geometry derived from the state vector.
struct EffectorView {
  Pose2 pose;
  bool closed = false;
  std::vector<Eigen::Vector2d> fingertips;  // world frame, hands only
};

inline constexpr double kGraspRadius = 0.12;
inline constexpr double kHandOpenRadius = 0.12;
inline constexpr double kHandClosedRadius = 0.04;

std::vector<EffectorView> effector_views(const Embodiment& body, const Eigen::VectorXd& state);
Eigen::VectorXd initial_state(const Embodiment& body);
// Robot gripper flag or closed human fingertip configuration.
void set_grip(const Embodiment& body, Eigen::Ref<Eigen::VectorXd> vec, int effector, bool closed);

// ---- tasks -------------------------------------------------------------------

using Milestone = std::function<bool(const Scene&, const Embodiment&, const Eigen::VectorXd&)>;

struct TaskSpec {
  std::string id;
  std::vector<std::string> milestone_names;
  std::vector<Milestone> milestones;

  int max_score() const { return static_cast<int>(milestones.size()); }
  static TaskSpec get(const std::string& id);
  static std::vector<std::string> all_ids();
};

inline constexpr const char* kStackDiscs = "stack_two_discs";
inline constexpr const char* kPressButton = "press_button";
inline constexpr const char* kLiftBar = "lift_bar";
inline constexpr const char* kOpenLidInsert = "open_lid_insert";

Scene generate_scene(const TaskSpec& task, const FactorConfig& factors, const Catalog& catalog, std::mt19937_64& rng);

// Places the task's targets at fixed left-side positions (right-side targets mirrored).
Scene generate_scene_at(const TaskSpec& task, const FactorConfig& factors, const Catalog& catalog,
                        const Eigen::Vector2d& left_target, const Eigen::Vector2d& right_target,
                        std::mt19937_64& rng);

// ---- dynamics ----------------------------------------------------------------

struct WorldState {
  Scene scene;
  Eigen::VectorXd body_state;
};

// Applies one relative action. Throws StepError on NaN or wrong dims.
WorldState step(const Embodiment& body, const Eigen::VectorXd& state, const Eigen::VectorXd& action,
                const Scene& scene);

// ---- rendering ---------------------------------------------------------------

struct RenderOptions {
  int height = 64;
  int width = 64;
  int views = 1;
  double noise_sigma = 4.0;  // 8-bit units, REAL / HUMAN only
  bool apply_lighting = true;
  std::uint64_t seed = 0;
};

Image render(const Scene& scene, const Embodiment& body, const Eigen::VectorXd& state, DomainTag domain,
             const RenderOptions& options, int view = 0);
Frame render_frame(const Scene& scene, const Embodiment& body, const Eigen::VectorXd& state, DomainTag domain,
                   const RenderOptions& options);

double mean_abs_pixel_difference(const Image& a, const Image& b);
void write_ppm(const Image& image, const std::filesystem::path& path);

// ---- experts and scoring -----------------------------------------------------

struct ExpertOptions {
  DomainTag domain = DomainTag::Sim;
  double frequency_hz = 10.0;
  double noise_sigma = 0.01;     // per-step translation noise
  double max_speed = 0.08;       // workspace units per step at 10 Hz
  double max_turn = 0.3;         // radians per step at 10 Hz
  int idle_min = 0;              // static frames before and after the motion
  int idle_max = 0;
  ActionFrame action_frame = ActionFrame::Relative;
  RenderOptions render;
};

struct ExpertResult {
  Episode episode;
  std::vector<WorldState> trace;  // one entry per recorded frame
};

// Throws GenerationError when a target is unreachable.
ExpertResult scripted_expert(const TaskSpec& task, const Scene& scene, const Embodiment& body,
                             const ExpertOptions& options, std::mt19937_64& rng);

int score_rollout(const std::vector<WorldState>& trace, const TaskSpec& task, const Embodiment& body);

}  // namespace simhum
