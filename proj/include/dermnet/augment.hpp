#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/image.hpp"
#include "dermnet/random.hpp"

namespace dermnet {

enum class FillMode { nearest, reflect, constant };
std::string_view fill_mode_name(FillMode mode);
FillMode parse_fill_mode(std::string_view name);

struct AugmentPolicy {
  double rotation_range = 180.0;  // degrees, theta ~ U[-r, r]
  double zoom_range = 0.1;        // scale ~ U[1-z, 1+z]
  bool horizontal_flip = true;
  bool vertical_flip = true;
  FillMode fill_mode = FillMode::nearest;
  std::uint8_t fill_value = 0;  // for FillMode::constant
  std::uint64_t seed = 0;

  void validate() const;
  static AugmentPolicy identity();
};

/// One concrete draw from a policy.
struct AugmentParams {
  double rotation_deg = 0.0;  // positive is counter-clockwise on screen
  double zoom = 1.0;          // > 1 magnifies
  bool hflip = false;
  bool vflip = false;

  bool is_identity() const { return rotation_deg == 0.0 && zoom == 1.0 && !hflip && !vflip; }
  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

/// Draws rotation, zoom, hflip, vflip, in that order; always consumes four
/// values so the stream position does not depend on the policy.
AugmentParams sample_augment(const AugmentPolicy& policy, Rng& rng);

/// Flip, rotate and zoom about the image centre as one affine map, resampled
/// by inverse mapping with bilinear interpolation. Output keeps the input
/// extents.
Image apply_affine(const Image& image, const AugmentParams& params, FillMode fill, std::uint8_t fill_value = 0);

Image apply_augment(const Image& image, const AugmentPolicy& policy, Rng& rng);

struct AugmentPlan {
  std::array<std::size_t, kNumClasses> targets;
  std::array<bool, kNumClasses> augment;

  AugmentPlan() {
    targets.fill(6000);
    augment.fill(true);
  }
  explicit AugmentPlan(std::size_t target) : AugmentPlan() { targets.fill(target); }
};

struct ManifestEntry {
  std::string synthetic_id;
  std::string source_image_id;
  int dx = 0;
  AugmentParams params;
  FillMode fill_mode = FillMode::nearest;
  std::uint64_t seed = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct AugmentManifest {
  std::vector<ManifestEntry> entries;
  std::array<std::size_t, kNumClasses> original_counts{};
  std::array<std::size_t, kNumClasses> final_counts{};
};

/// For every augmented class below its target, cycles over that class's
/// training originals (sorted by image_id) and draws (target - current)
/// synthetic entries. Entry i of class c from source s is seeded with
/// derive_seed(policy.seed, c, s, i), so entries are independent of order.
/// Validation records are never used. Throws RebalanceError for an empty
/// class with a nonzero target.
AugmentManifest rebalance_classes(const DatasetIndex& index, const AugmentPlan& plan, const AugmentPolicy& policy);

void write_manifest_csv(const AugmentManifest& manifest, const std::filesystem::path& path);
std::vector<ManifestEntry> read_manifest_csv(const std::filesystem::path& path);

/// Renders each entry from <source_root>/<source_image_id>.* into
/// <out_dir>/<synthetic_id>.png.
void materialize_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& source_root,
                          const std::filesystem::path& out_dir, std::uint8_t fill_value = 0);

}  // namespace dermnet
