#include "needle/labels.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace needle {

ClassLabel label_from_index(int index) {
  if (index < 0 || index >= kNumClasses) {
    throw std::out_of_range("class label " + std::to_string(index) + " outside 0..7");
  }
  return static_cast<ClassLabel>(index);
}

ClassLabel tissue_label(TissueType tissue) {
  return static_cast<ClassLabel>(to_index(ClassLabel::Liver) + static_cast<int>(tissue));
}

bool is_tissue_label(ClassLabel label) { return to_index(label) >= to_index(ClassLabel::Liver); }

std::optional<TissueType> tissue_of(ClassLabel label) {
  if (!is_tissue_label(label)) return std::nullopt;
  return static_cast<TissueType>(to_index(label) - to_index(ClassLabel::Liver));
}

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::Neutral: return "neutral";
    case ClassLabel::PrePuncture: return "pre-puncture";
    case ClassLabel::Puncture: return "puncture";
    case ClassLabel::Liver: return "liver";
    case ClassLabel::Kidney: return "kidney";
    case ClassLabel::Heart: return "heart";
    case ClassLabel::Belly: return "belly";
    case ClassLabel::Hock: return "hock";
  }
  return "?";
}

std::string_view to_string(TissueType tissue) { return to_string(tissue_label(tissue)); }

TissueType parse_tissue(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (TissueType t : kAllTissues) {
    if (lower == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown tissue type '" + std::string(name) + "'");
}

}  // namespace needle
