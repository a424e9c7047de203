#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dermnet/image.hpp"
#include "dermnet/labels.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

struct MetadataRecord {
  std::string lesion_id;
  std::string image_id;
  int dx = 0;  // index into kClassLabels
  std::string dx_type;
  std::optional<double> age;
  std::string sex;
  std::string localization;
  bool age_imputed = false;

  friend bool operator==(const MetadataRecord&, const MetadataRecord&) = default;
};

/// HAM10000 layout: header must name lesion_id, image_id, dx, dx_type, age,
/// sex and localization (any order, extra columns ignored). Empty age cells
/// become absent ages. Throws ParseError carrying the 1-based line number.
std::vector<MetadataRecord> parse_metadata(std::istream& in);
std::vector<MetadataRecord> load_metadata(const std::filesystem::path& csv_path);

struct ImputeResult {
  std::vector<MetadataRecord> records;
  double fill_value = 0.0;
  std::size_t imputed = 0;
};

/// Mean fill of missing ages. Throws ImputationError if every age is missing.
ImputeResult impute_age(std::vector<MetadataRecord> records);

enum class Split { train, validation };

struct DatasetIndex {
  std::vector<MetadataRecord> records;  // sorted by image_id
  std::vector<Split> split;             // parallel to records
  std::filesystem::path image_root;

  std::size_t count(Split which) const;
  std::vector<MetadataRecord> partition(Split which) const;
};

/// Validation is sampled uniformly (seeded) from lesions that own exactly one
/// image; everything else trains. Throws SplitError when too few lesions are
/// eligible.
DatasetIndex make_split(std::vector<MetadataRecord> records, std::size_t validation_target, std::uint64_t seed);

void write_split_csv(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex read_split_csv(const std::filesystem::path& path);

/// First existing <root>/<image_id>.{jpg,jpeg,png}.
std::optional<std::filesystem::path> find_image_file(const std::filesystem::path& root, const std::string& image_id);

/// Half-pixel-centre bilinear resampling, source coordinates clamped to the
/// image. Aspect ratio is not preserved.
Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w);

/// x/127.5 - 1 into a (1,H,W,3) tensor.
Tensor preprocess_pixels(const Image& image);

/// Stacks same-sized images into (N,H,W,3).
Tensor preprocess_batch(std::span<const Image> images);

inline constexpr double kAgeBinWidth = 5.0;

struct AgeHistogram {
  std::vector<std::size_t> counts;  // bin i covers [5i, 5i+5)

  std::size_t total() const;
  std::size_t mode_bin() const;  // lowest index among ties
  static double bin_lower(std::size_t bin) { return kAgeBinWidth * static_cast<double>(bin); }
  static std::size_t bin_of(double age);
  bool bin_contains(std::size_t bin, double age) const { return bin_of(age) == bin; }
};

struct EdaReport {
  AgeHistogram overall;
  std::array<AgeHistogram, kNumClasses> by_class;
  std::vector<std::pair<std::string, std::size_t>> localization;  // descending count, then name
  std::array<std::size_t, kNumClasses> class_counts{};
  bool includes_imputed = true;
  std::size_t records = 0;
};

/// Histograms all share the same bin range. With include_imputed=false,
/// ages filled by impute_age are left out of the age histograms.
EdaReport eda_histograms(std::span<const MetadataRecord> records, bool include_imputed = true);

/// Writes eda_age_by_class.csv, eda_age_overall.csv, eda_localization.csv,
/// eda_class_counts.csv and eda_report.json into `dir`.
void write_eda(const EdaReport& report, const std::filesystem::path& dir);

}  // namespace dermnet
