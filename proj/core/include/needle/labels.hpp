#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace needle {

enum class TissueType : std::uint8_t { Liver, Kidney, Heart, Belly, Hock };

inline constexpr int kNumTissues = 5;

inline constexpr std::array<TissueType, kNumTissues> kAllTissues = {
    TissueType::Liver, TissueType::Kidney, TissueType::Heart, TissueType::Belly,
    TissueType::Hock};

/// Per-window / per-sample class. The integer encoding is part of every file
/// format and must never change.
enum class ClassLabel : std::uint8_t {
  Neutral = 0,
  PrePuncture = 1,
  Puncture = 2,
  Liver = 3,
  Kidney = 4,
  Heart = 5,
  Belly = 6,
  Hock = 7,
};

inline constexpr int kNumClasses = 8;

constexpr int to_index(ClassLabel label) { return static_cast<int>(label); }

/// Throws std::out_of_range for values outside 0..7.
ClassLabel label_from_index(int index);

ClassLabel tissue_label(TissueType tissue);
bool is_tissue_label(ClassLabel label);
std::optional<TissueType> tissue_of(ClassLabel label);

std::string_view to_string(ClassLabel label);
std::string_view to_string(TissueType tissue);

/// Case-insensitive; throws std::invalid_argument for unknown names.
TissueType parse_tissue(std::string_view name);

}  // namespace needle
