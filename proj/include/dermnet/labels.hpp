#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace dermnet {

struct ClassLabel {
  std::string_view code;
  std::string_view name;
};

inline constexpr std::size_t kNumClasses = 7;

/// Canonical class order, alphabetical by dataset code. Every class index in
/// the library, the weight files and the HTTP API refers to this order.
inline constexpr std::array<ClassLabel, kNumClasses> kClassLabels{{
    {"akiec", "Actinic keratosis"},
    {"bcc", "Basal cell carcinoma"},
    {"bkl", "Benign keratosis"},
    {"df", "Dermatofibroma"},
    {"mel", "Melanoma"},
    {"nv", "Melanocytic nevi"},
    {"vasc", "Vascular lesions"},
}};

constexpr std::optional<int> class_index(std::string_view code) {
  for (std::size_t i = 0; i < kClassLabels.size(); ++i) {
    if (kClassLabels[i].code == code) return static_cast<int>(i);
  }
  return std::nullopt;
}

}  // namespace dermnet
