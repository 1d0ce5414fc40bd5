#include "needle/scene_config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace needle::mechanics {

using nlohmann::json;

namespace {

double number(const json& obj, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  const auto& v = obj.at(key);
  if (!v.is_number()) throw std::invalid_argument(std::string("scene: '") + key + "' must be a number");
  return v.get<double>();
}

TissueProfile parse_tissue_layer(const json& j) {
  if (!j.contains("tissue") || !j.at("tissue").is_string()) {
    throw std::invalid_argument("scene: tissue layer needs a \"tissue\" name");
  }
  TissueProfile p = default_profile(parse_tissue(j.at("tissue").get<std::string>()));
  p.a1 = number(j, "a1", p.a1);
  p.a2 = number(j, "a2", p.a2);
  p.puncture_depth = number(j, "puncture_depth", p.puncture_depth);
  p.puncture_relax_samples =
      static_cast<int>(number(j, "puncture_relax_samples", p.puncture_relax_samples));
  p.cutting_force = number(j, "cutting_force", p.cutting_force);
  p.friction_coulomb = number(j, "friction_coulomb", p.friction_coulomb);
  p.friction_viscous = number(j, "friction_viscous", p.friction_viscous);
  p.static_band = number(j, "static_band", p.static_band);
  p.noise_std = number(j, "noise_std", p.noise_std);
  p.thickness = number(j, "thickness", p.thickness);
  return p;
}

json tissue_to_json(const TissueProfile& p) {
  return json{{"type", "tissue"},
              {"tissue", std::string(to_string(p.tissue))},
              {"a1", p.a1},
              {"a2", p.a2},
              {"puncture_depth", p.puncture_depth},
              {"puncture_relax_samples", p.puncture_relax_samples},
              {"cutting_force", p.cutting_force},
              {"friction_coulomb", p.friction_coulomb},
              {"friction_viscous", p.friction_viscous},
              {"static_band", p.static_band},
              {"noise_std", p.noise_std},
              {"thickness", p.thickness}};
}

}  // namespace

SceneFile parse_scene_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("scene: invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("scene: top level must be an object");

  SceneFile out;
  out.scene.name = j.value("name", std::string("scene"));
  out.motion.sample_rate = number(j, "sample_rate_hz", 20.0);
  if (j.contains("seed")) out.seed = j.at("seed").get<std::uint64_t>();

  if (!j.contains("layers") || !j.at("layers").is_array()) {
    throw std::invalid_argument("scene: \"layers\" array required");
  }
  for (const auto& layer : j.at("layers")) {
    const std::string type = layer.value("type", std::string("tissue"));
    if (type == "cavity") {
      out.scene.layers.emplace_back(Cavity{number(layer, "length", 0.0)});
    } else if (type == "tissue") {
      out.scene.layers.emplace_back(parse_tissue_layer(layer));
    } else {
      throw std::invalid_argument("scene: unknown layer type '" + type + "'");
    }
  }

  if (j.contains("motion")) {
    for (const auto& seg : j.at("motion")) {
      out.motion.segments.push_back(
          MotionSegment{number(seg, "velocity", 0.0), number(seg, "duration", 0.0)});
    }
  } else {
    out.motion.segments.push_back(MotionSegment{2.0, 6.0});
  }

  out.scene.validate();
  out.motion.validate();
  return out;
}

SceneFile load_scene_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scene file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_scene_json(buffer.str());
}

std::string scene_to_json(const SceneFile& file) {
  json j;
  j["name"] = file.scene.name;
  j["sample_rate_hz"] = file.motion.sample_rate;
  if (file.seed) j["seed"] = *file.seed;
  j["layers"] = json::array();
  for (const auto& layer : file.scene.layers) {
    if (const auto* p = std::get_if<TissueProfile>(&layer)) {
      j["layers"].push_back(tissue_to_json(*p));
    } else {
      j["layers"].push_back(json{{"type", "cavity"}, {"length", std::get<Cavity>(layer).length}});
    }
  }
  j["motion"] = json::array();
  for (const auto& seg : file.motion.segments) {
    j["motion"].push_back(json{{"velocity", seg.velocity}, {"duration", seg.duration}});
  }
  return j.dump(2);
}

}  // namespace needle::mechanics
