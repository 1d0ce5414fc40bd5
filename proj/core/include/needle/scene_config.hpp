#pragma once

// JSON scene files:
//
//   {
//     "name": "liver",
//     "sample_rate_hz": 20,
//     "seed": 7,
//     "layers": [
//       {"type": "cavity", "length": 2.0},
//       {"type": "tissue", "tissue": "liver", "thickness": 30.0}
//     ],
//     "motion": [{"velocity": 2.0, "duration": 6.0}]
//   }
//
// Tissue layers start from default_profile() and accept any TissueProfile
// field name as an override.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "needle/mechanics.hpp"

namespace needle::mechanics {

struct SceneFile {
  Scene scene;
  MotionProgram motion;
  std::optional<std::uint64_t> seed;
};

/// Throws std::invalid_argument with the offending key on malformed input.
SceneFile parse_scene_json(std::string_view text);
SceneFile load_scene_file(const std::filesystem::path& path);
std::string scene_to_json(const SceneFile& file);

}  // namespace needle::mechanics
