#include "needle/mechanics.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

#include "needle/dataset.hpp"

namespace needle::mechanics {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

std::string profile_context(const TissueProfile& p) {
  return "tissue profile '" + std::string(to_string(p.tissue)) + "': ";
}

}  // namespace

void TissueProfile::validate() const {
  const auto ctx = profile_context(*this);
  require(a1 >= 0.0 && a2 >= 0.0, ctx + "stiffness coefficients must be nonnegative");
  require(a1 > 0.0 || a2 > 0.0, ctx + "stiffness coefficients cannot both be zero");
  require(puncture_depth > 0.0, ctx + "puncture_depth must be positive");
  require(puncture_relax_samples >= 1, ctx + "puncture_relax_samples must be >= 1");
  require(cutting_force >= 0.0, ctx + "cutting_force must be nonnegative");
  require(friction_coulomb >= 0.0, ctx + "friction_coulomb must be nonnegative");
  require(friction_viscous >= 0.0, ctx + "friction_viscous must be nonnegative");
  require(static_band > 0.0, ctx + "static_band must be positive");
  require(noise_std >= 0.0, ctx + "noise_std must be nonnegative");
  require(thickness > puncture_depth, ctx + "thickness must exceed puncture_depth");
}

TissueProfile default_profile(TissueType tissue) {
  TissueProfile p;
  p.tissue = tissue;
  switch (tissue) {
    case TissueType::Liver:
      p.a1 = 0.10; p.a2 = 0.030; p.puncture_depth = 3.0;
      p.cutting_force = 0.20; p.friction_coulomb = 0.020; p.friction_viscous = 0.004;
      break;
    case TissueType::Kidney:
      p.a1 = 0.15; p.a2 = 0.060; p.puncture_depth = 2.5;
      p.cutting_force = 0.35; p.friction_coulomb = 0.035; p.friction_viscous = 0.006;
      break;
    case TissueType::Heart:
      p.a1 = 0.30; p.a2 = 0.100; p.puncture_depth = 2.2;
      p.cutting_force = 0.60; p.friction_coulomb = 0.060; p.friction_viscous = 0.010;
      break;
    case TissueType::Belly:
      p.a1 = 0.20; p.a2 = 0.080; p.puncture_depth = 4.0;
      p.cutting_force = 1.00; p.friction_coulomb = 0.100; p.friction_viscous = 0.015;
      break;
    case TissueType::Hock:
      p.a1 = 0.345; p.a2 = 0.115; p.puncture_depth = 2.3;
      p.cutting_force = 0.69; p.friction_coulomb = 0.069; p.friction_viscous = 0.0115;
      break;
  }
  return p;
}

void MotionProgram::validate() const {
  require(sample_rate > 0.0, "motion program: sample_rate must be positive");
  require(!segments.empty(), "motion program: no segments");
  for (std::size_t i = 0; i < segments.size(); ++i) {
    require(segments[i].duration > 0.0,
            "motion program: segment " + std::to_string(i) + " has nonpositive duration");
    require(std::isfinite(segments[i].velocity),
            "motion program: segment " + std::to_string(i) + " has non-finite velocity");
  }
}

std::vector<double> MotionProgram::sample_velocities() const {
  std::vector<double> v;
  for (const auto& seg : segments) {
    const auto n = static_cast<std::size_t>(std::llround(seg.duration * sample_rate));
    v.insert(v.end(), n, seg.velocity);
  }
  return v;
}

MotionProgram constant_feed(double velocity, double duration, double sample_rate) {
  return MotionProgram{{MotionSegment{velocity, duration}}, sample_rate};
}

void Scene::validate() const {
  require(!layers.empty(), "scene '" + name + "': at least one layer required");
  for (const auto& layer : layers) {
    if (const auto* tissue = std::get_if<TissueProfile>(&layer)) {
      tissue->validate();
    } else {
      require(std::get<Cavity>(layer).length > 0.0,
              "scene '" + name + "': cavity length must be positive");
    }
  }
}

double Scene::sensor_noise_std() const {
  std::optional<double> noise;
  for (const auto& layer : layers) {
    if (const auto* tissue = std::get_if<TissueProfile>(&layer)) {
      noise = std::max(noise.value_or(0.0), tissue->noise_std);
    }
  }
  return noise.value_or(kDefaultNoiseStd);
}

std::vector<LayerSpan> layout(const Scene& scene) {
  std::vector<LayerSpan> spans;
  double surface = 0.0;
  for (const auto& layer : scene.layers) {
    LayerSpan span;
    span.surface = surface;
    if (const auto* tissue = std::get_if<TissueProfile>(&layer)) {
      span.tissue = tissue->tissue;
      span.exit = surface + tissue->thickness;
      span.relax_samples = tissue->puncture_relax_samples;
    } else {
      span.exit = surface + std::get<Cavity>(layer).length;
    }
    surface = span.exit;
    spans.push_back(span);
  }
  return spans;
}

double stiffness_force(double depth_into_layer, const TissueProfile& profile, bool punctured,
                       int samples_since_puncture) {
  if (!(depth_into_layer >= 0.0)) {
    throw std::domain_error("stiffness_force: negative depth " + std::to_string(depth_into_layer));
  }
  const double d = depth_into_layer;
  const double elastic = profile.a1 * d + profile.a2 * d * d;
  if (!punctured) return elastic;
  const double remaining =
      1.0 - static_cast<double>(samples_since_puncture) / profile.puncture_relax_samples;
  return elastic * std::max(0.0, remaining);
}

double friction_force(double inserted_depth, double velocity, const TissueProfile& profile) {
  if (!(inserted_depth >= 0.0)) {
    throw std::domain_error("friction_force: negative inserted depth " +
                            std::to_string(inserted_depth));
  }
  if (std::abs(velocity) <= profile.static_band) return 0.0;
  const double sign = velocity > 0.0 ? 1.0 : -1.0;
  return inserted_depth * (profile.friction_coulomb * sign + profile.friction_viscous * velocity);
}

double cutting_force(const TissueProfile& profile, bool punctured, double velocity) {
  return punctured && velocity > 0.0 ? profile.cutting_force : 0.0;
}

namespace {

struct TissueState {
  const TissueProfile* profile = nullptr;
  double surface = 0.0;
  double exit = 0.0;
  bool punctured = false;
  std::size_t puncture_sample = 0;
  double rupture_depth = 0.0;
};

}  // namespace

SimulationResult simulate_detailed(const Scene& scene, const MotionProgram& motion,
                                   std::uint64_t seed) {
  scene.validate();
  motion.validate();
  const std::vector<double> velocity = motion.sample_velocities();
  if (velocity.empty()) {
    throw std::invalid_argument("motion program yields no samples");
  }

  const auto spans = layout(scene);
  std::vector<TissueState> tissues;
  for (std::size_t i = 0; i < scene.layers.size(); ++i) {
    if (const auto* p = std::get_if<TissueProfile>(&scene.layers[i])) {
      tissues.push_back(TissueState{p, spans[i].surface, spans[i].exit});
    }
  }

  const std::size_t n = velocity.size();
  SimulationResult result;
  InsertionTrace& trace = result.trace;
  trace.sample_rate = motion.sample_rate;
  trace.layers = spans;
  trace.velocity = velocity;
  trace.t.resize(n);
  trace.x.resize(n);
  trace.f.resize(n);
  auto& comp = result.components;
  comp.stiffness.assign(n, 0.0);
  comp.friction.assign(n, 0.0);
  comp.cutting.assign(n, 0.0);

  std::mt19937_64 rng(seed);
  const double noise_std = scene.sensor_noise_std();
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);

  double x = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = velocity[i];
    if (i > 0) x = std::max(0.0, x + v / motion.sample_rate);
    trace.t[i] = static_cast<double>(i) / motion.sample_rate;
    trace.x[i] = x;

    double stiffness = 0.0;
    double friction = 0.0;
    double cutting = 0.0;
    bool frontmost_seen = false;
    for (auto& layer : tissues) {
      const TissueProfile& p = *layer.profile;
      if (!layer.punctured) {
        if (frontmost_seen) break;
        frontmost_seen = true;
        const double d = x - layer.surface;
        if (d <= 0.0) break;
        if (d >= p.puncture_depth) {
          layer.punctured = true;
          layer.puncture_sample = i;
          layer.rupture_depth = d;
          trace.puncture_timestamps.push_back(trace.t[i]);
        } else {
          stiffness += stiffness_force(d, p, false, 0);
          continue;
        }
      }
      const int since = static_cast<int>(i - layer.puncture_sample);
      stiffness += stiffness_force(layer.rupture_depth, p, true, since);
      const double contact = std::max(0.0, std::min(x, layer.exit) - layer.surface);
      friction += friction_force(contact, v, p);
      if (x > layer.surface && x <= layer.exit) cutting += cutting_force(p, true, v);
    }

    comp.stiffness[i] = stiffness;
    comp.friction[i] = friction;
    comp.cutting[i] = cutting;
    double f = stiffness + friction + cutting;
    if (noise_std > 0.0) f += noise(rng);
    trace.f[i] = f;
  }

  trace.label = dataset::label_trace(trace);
  return result;
}

InsertionTrace simulate_insertion(const Scene& scene, const MotionProgram& motion,
                                  std::uint64_t seed) {
  return simulate_detailed(scene, motion, seed).trace;
}

}  // namespace needle::mechanics
