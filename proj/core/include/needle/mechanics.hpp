#pragma once

// Three-phase needle insertion force model and trace synthesis.
//
// A needle advances along one axis through an ordered stack of layers. Each
// tissue layer resists first with a quadratic stiffness force while its surface
// deforms, ruptures once the deformation reaches the puncture depth, and from
// then on loads the shaft with Karnopp-style friction proportional to the
// contact length plus a constant cutting force at the tip. Cavities are
// force-free gaps.

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "needle/labels.hpp"

namespace needle::mechanics {

inline constexpr double kDefaultNoiseStd = 0.01;  // N

struct TissueProfile {
  TissueType tissue = TissueType::Liver;
  double a1 = 0.0;                  // N/mm
  double a2 = 0.0;                  // N/mm^2
  double puncture_depth = 1.0;      // mm of deformation at rupture
  int puncture_relax_samples = 5;
  double cutting_force = 0.0;       // N
  double friction_coulomb = 0.0;    // N/mm
  double friction_viscous = 0.0;    // N*s/mm^2
  double static_band = 0.1;         // mm/s
  double noise_std = kDefaultNoiseStd;  // N
  double thickness = 40.0;          // mm

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// Built-in parameter table. Values are configuration, not measurements; heart
/// and hock are intentionally close to each other.
TissueProfile default_profile(TissueType tissue);

struct MotionSegment {
  double velocity = 0.0;  // mm/s, zero for a dwell, negative for retraction
  double duration = 0.0;  // s
};

struct MotionProgram {
  std::vector<MotionSegment> segments;
  double sample_rate = 20.0;  // Hz

  void validate() const;
  /// Commanded velocity for every sample; segment i contributes
  /// round(duration * sample_rate) samples.
  std::vector<double> sample_velocities() const;
};

/// Constant-speed program, the usual insertion protocol.
MotionProgram constant_feed(double velocity, double duration, double sample_rate);

struct Cavity {
  double length = 0.0;  // mm
};

using Layer = std::variant<TissueProfile, Cavity>;

struct Scene {
  std::string name;
  std::vector<Layer> layers;

  void validate() const;
  /// Sensor noise for the whole trace: the largest noise_std among tissue
  /// layers, or kDefaultNoiseStd when the scene holds no tissue.
  double sensor_noise_std() const;
};

/// Geometry of one layer along the insertion axis, in undeformed coordinates.
struct LayerSpan {
  std::optional<TissueType> tissue;  // empty for cavities
  double surface = 0.0;              // mm
  double exit = 0.0;                 // mm
  int relax_samples = 0;
};

std::vector<LayerSpan> layout(const Scene& scene);

struct InsertionTrace {
  double sample_rate = 20.0;
  std::vector<double> t;         // s
  std::vector<double> x;         // mm
  std::vector<double> f;         // N
  std::vector<double> velocity;  // commanded, mm/s
  std::vector<ClassLabel> label;
  std::vector<double> puncture_timestamps;  // one per punctured tissue layer, in order
  std::vector<LayerSpan> layers;

  std::size_t size() const { return t.size(); }
};

/// Noise-free per-sample decomposition of the simulated force.
struct ForceComponents {
  std::vector<double> stiffness;
  std::vector<double> friction;
  std::vector<double> cutting;
};

struct SimulationResult {
  InsertionTrace trace;
  ForceComponents components;
};

/// Stiffness of a layer at deformation `depth_into_layer`. Once punctured,
/// `depth_into_layer` is the deformation at the rupture instant and the force
/// decays linearly to zero over puncture_relax_samples.
/// Throws std::domain_error for negative depth.
double stiffness_force(double depth_into_layer, const TissueProfile& profile, bool punctured,
                       int samples_since_puncture);

/// Karnopp friction along `inserted_depth` mm of shaft; zero inside the static band.
/// Throws std::domain_error for negative depth.
double friction_force(double inserted_depth, double velocity, const TissueProfile& profile);

double cutting_force(const TissueProfile& profile, bool punctured, double velocity);

/// Deterministic in (scene, motion, seed). Throws std::invalid_argument for an
/// invalid scene or an empty motion program.
SimulationResult simulate_detailed(const Scene& scene, const MotionProgram& motion,
                                   std::uint64_t seed);

InsertionTrace simulate_insertion(const Scene& scene, const MotionProgram& motion,
                                  std::uint64_t seed);

}  // namespace needle::mechanics
