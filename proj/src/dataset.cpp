#include "dermnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <numeric>

#include "dermnet/csv.hpp"
#include "dermnet/errors.hpp"
#include "dermnet/random.hpp"

namespace dermnet {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return in;
}

std::map<std::string, std::size_t> column_map(const std::vector<std::string>& header) {
  std::map<std::string, std::size_t> cols;
  for (std::size_t i = 0; i < header.size(); ++i) cols.emplace(header[i], i);
  return cols;
}

}  // namespace

std::vector<MetadataRecord> parse_metadata(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, "empty metadata file");
  const auto cols = column_map(csv::split_line(line));
  static constexpr const char* kRequired[] = {"lesion_id", "image_id", "dx", "dx_type", "age", "sex", "localization"};
  std::array<std::size_t, 7> idx{};
  for (std::size_t i = 0; i < 7; ++i) {
    auto it = cols.find(kRequired[i]);
    if (it == cols.end()) throw ParseError(line_no, std::string("missing column ") + kRequired[i]);
    idx[i] = it->second;
  }
  const std::size_t width = cols.size();

  std::vector<MetadataRecord> records;
  while (csv::next_line(in, line, line_no)) {
    const auto f = csv::split_line(line);
    if (f.size() != width) {
      throw ParseError(line_no, "expected " + std::to_string(width) + " fields, found " + std::to_string(f.size()));
    }
    MetadataRecord r;
    r.lesion_id = f[idx[0]];
    r.image_id = f[idx[1]];
    if (r.image_id.empty()) throw ParseError(line_no, "empty image_id");
    const auto dx = class_index(f[idx[2]]);
    if (!dx) throw ParseError(line_no, "unknown diagnosis code '" + f[idx[2]] + "'");
    r.dx = *dx;
    r.dx_type = f[idx[3]];
    if (!f[idx[4]].empty()) {
      const auto age = parse_double(f[idx[4]]);
      if (!age) throw ParseError(line_no, "malformed age '" + f[idx[4]] + "'");
      if (*age < 0.0 || *age > 120.0) throw ParseError(line_no, "age out of range [0, 120]");
      r.age = *age;
    }
    r.sex = f[idx[5]];
    r.localization = f[idx[6]];
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<MetadataRecord> load_metadata(const std::filesystem::path& csv_path) {
  auto in = open_input(csv_path);
  return parse_metadata(in);
}

ImputeResult impute_age(std::vector<MetadataRecord> records) {
  double sum = 0.0;
  std::size_t present = 0;
  for (const auto& r : records) {
    if (r.age) {
      sum += *r.age;
      ++present;
    }
  }
  if (present == 0) throw ImputationError("cannot impute age: every age is missing");
  ImputeResult result;
  result.fill_value = sum / static_cast<double>(present);
  for (auto& r : records) {
    if (!r.age) {
      r.age = result.fill_value;
      r.age_imputed = true;
      ++result.imputed;
    }
  }
  result.records = std::move(records);
  return result;
}

std::size_t DatasetIndex::count(Split which) const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), which));
}

std::vector<MetadataRecord> DatasetIndex::partition(Split which) const {
  std::vector<MetadataRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (split[i] == which) out.push_back(records[i]);
  }
  return out;
}

DatasetIndex make_split(std::vector<MetadataRecord> records, std::size_t validation_target, std::uint64_t seed) {
  if (validation_target >= records.size()) {
    throw ValidationError("validation target " + std::to_string(validation_target) + " must be below the record count " +
                          std::to_string(records.size()));
  }
  std::sort(records.begin(), records.end(),
            [](const MetadataRecord& a, const MetadataRecord& b) { return a.image_id < b.image_id; });

  std::map<std::string, std::size_t> images_per_lesion;
  for (const auto& r : records) ++images_per_lesion[r.lesion_id];
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (images_per_lesion[records[i].lesion_id] == 1) eligible.push_back(i);
  }
  if (eligible.size() < validation_target) {
    throw SplitError("only " + std::to_string(eligible.size()) + " single-image lesions available, " +
                     std::to_string(validation_target) + " requested for validation");
  }

  // Partial Fisher-Yates over the eligible pool.
  Rng rng(seed);
  for (std::size_t i = 0; i < validation_target; ++i) {
    const std::size_t j = i + rng.below(eligible.size() - i);
    std::swap(eligible[i], eligible[j]);
  }

  DatasetIndex index;
  index.split.assign(records.size(), Split::train);
  for (std::size_t i = 0; i < validation_target; ++i) index.split[eligible[i]] = Split::validation;
  index.records = std::move(records);
  return index;
}

void write_split_csv(const DatasetIndex& index, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "image_id,lesion_id,dx,dx_type,age,age_imputed,sex,localization,split\n";
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    const auto& r = index.records[i];
    out << csv::join({r.image_id, r.lesion_id, std::string(kClassLabels[r.dx].code), r.dx_type,
                      r.age ? format_double(*r.age) : std::string(), r.age_imputed ? "1" : "0", r.sex, r.localization,
                      index.split[i] == Split::train ? "train" : "validation"})
        << '\n';
  }
}

DatasetIndex read_split_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) throw ParseError(1, "empty split file");
  const auto cols = column_map(csv::split_line(line));
  auto col = [&](const char* name) {
    auto it = cols.find(name);
    if (it == cols.end()) throw ParseError(line_no, std::string("missing column ") + name);
    return it->second;
  };
  const std::size_t c_image = col("image_id"), c_lesion = col("lesion_id"), c_dx = col("dx"), c_type = col("dx_type"),
                    c_age = col("age"), c_imp = col("age_imputed"), c_sex = col("sex"), c_loc = col("localization"),
                    c_split = col("split");
  DatasetIndex index;
  while (csv::next_line(in, line, line_no)) {
    const auto f = csv::split_line(line);
    if (f.size() != cols.size()) throw ParseError(line_no, "wrong field count");
    MetadataRecord r;
    r.image_id = f[c_image];
    r.lesion_id = f[c_lesion];
    const auto dx = class_index(f[c_dx]);
    if (!dx) throw ParseError(line_no, "unknown diagnosis code '" + f[c_dx] + "'");
    r.dx = *dx;
    r.dx_type = f[c_type];
    if (!f[c_age].empty()) {
      r.age = parse_double(f[c_age]);
      if (!r.age) throw ParseError(line_no, "malformed age");
    }
    r.age_imputed = f[c_imp] == "1";
    r.sex = f[c_sex];
    r.localization = f[c_loc];
    if (f[c_split] != "train" && f[c_split] != "validation") throw ParseError(line_no, "split must be train or validation");
    index.split.push_back(f[c_split] == "train" ? Split::train : Split::validation);
    index.records.push_back(std::move(r));
  }
  return index;
}

std::optional<std::filesystem::path> find_image_file(const std::filesystem::path& root, const std::string& image_id) {
  for (const char* ext : {".jpg", ".jpeg", ".png", ".JPG", ".PNG"}) {
    auto p = root / (image_id + ext);
    if (std::filesystem::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

Image resize_bilinear(const Image& image, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0 || image.width == 0 || image.height == 0) {
    throw ValidationError("resize extents must be positive");
  }
  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t in, std::size_t out) {
    std::vector<Tap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    const double max_src = static_cast<double>(in - 1);
    for (std::size_t d = 0; d < out; ++d) {
      const double src = std::clamp((static_cast<double>(d) + 0.5) * scale - 0.5, 0.0, max_src);
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[d] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(image.height, out_h);
  const auto tx = taps(image.width, out_w);

  Image out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = image.at(tx[x].lo, ty[y].lo, c) * (1.0 - tx[x].frac) + image.at(tx[x].hi, ty[y].lo, c) * tx[x].frac;
        const double bot = image.at(tx[x].lo, ty[y].hi, c) * (1.0 - tx[x].frac) + image.at(tx[x].hi, ty[y].hi, c) * tx[x].frac;
        const double v = top * (1.0 - ty[y].frac) + bot * ty[y].frac;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

Tensor preprocess_pixels(const Image& image) {
  Tensor t({1, image.height, image.width, 3}, 0.0f);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    t[i] = static_cast<float>(static_cast<double>(image.pixels[i]) / 127.5 - 1.0);
  }
  return t;
}

Tensor preprocess_batch(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("cannot build an empty batch");
  const std::size_t h = images[0].height, w = images[0].width;
  Tensor t({images.size(), h, w, 3}, 0.0f);
  const std::size_t per = h * w * 3;
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) throw ShapeError("batch images differ in size");
    const Tensor one = preprocess_pixels(images[n]);
    std::copy(one.data().begin(), one.data().end(), t.data().begin() + static_cast<std::ptrdiff_t>(n * per));
  }
  return t;
}

std::size_t AgeHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::size_t AgeHistogram::mode_bin() const {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::size_t AgeHistogram::bin_of(double age) { return static_cast<std::size_t>(std::floor(age / kAgeBinWidth)); }

EdaReport eda_histograms(std::span<const MetadataRecord> records, bool include_imputed) {
  if (records.empty()) throw ValidationError("EDA needs at least one record");
  EdaReport report;
  report.includes_imputed = include_imputed;
  report.records = records.size();

  std::size_t bins = 1;
  for (const auto& r : records) {
    if (r.age) bins = std::max(bins, AgeHistogram::bin_of(*r.age) + 1);
  }
  report.overall.counts.assign(bins, 0);
  for (auto& h : report.by_class) h.counts.assign(bins, 0);

  std::map<std::string, std::size_t> sites;
  for (const auto& r : records) {
    ++report.class_counts[r.dx];
    ++sites[r.localization];
    if (!r.age || (r.age_imputed && !include_imputed)) continue;
    const std::size_t b = AgeHistogram::bin_of(*r.age);
    ++report.overall.counts[b];
    ++report.by_class[r.dx].counts[b];
  }
  report.localization.assign(sites.begin(), sites.end());
  std::stable_sort(report.localization.begin(), report.localization.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return report;
}

namespace {

std::string bin_label(std::size_t bin) {
  const auto lo = static_cast<long>(AgeHistogram::bin_lower(bin));
  return std::to_string(lo) + "-" + std::to_string(lo + static_cast<long>(kAgeBinWidth));
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "bin_or_category,class_or_total,count\n";
  return out;
}

}  // namespace

void write_eda(const EdaReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = open_output(dir / "eda_age_by_class.csv");
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      for (std::size_t b = 0; b < report.by_class[c].counts.size(); ++b) {
        out << bin_label(b) << ',' << kClassLabels[c].code << ',' << report.by_class[c].counts[b] << '\n';
      }
    }
  }
  {
    auto out = open_output(dir / "eda_age_overall.csv");
    for (std::size_t b = 0; b < report.overall.counts.size(); ++b) {
      out << bin_label(b) << ",total," << report.overall.counts[b] << '\n';
    }
  }
  {
    auto out = open_output(dir / "eda_localization.csv");
    for (const auto& [site, n] : report.localization) out << csv::escape(site) << ",total," << n << '\n';
  }
  {
    auto out = open_output(dir / "eda_class_counts.csv");
    for (std::size_t c = 0; c < kNumClasses; ++c) out << kClassLabels[c].code << ",total," << report.class_counts[c] << '\n';
  }

  nlohmann::ordered_json j;
  j["records"] = report.records;
  j["includes_imputed_ages"] = report.includes_imputed;
  j["age_bin_width"] = kAgeBinWidth;
  j["age_overall"] = report.overall.counts;
  j["age_overall_mode_bin"] = bin_label(report.overall.mode_bin());
  nlohmann::ordered_json by_class, counts;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    by_class[std::string(kClassLabels[c].code)] = report.by_class[c].counts;
    counts[std::string(kClassLabels[c].code)] = report.class_counts[c];
  }
  j["age_by_class"] = by_class;
  j["class_counts"] = counts;
  nlohmann::ordered_json sites = nlohmann::ordered_json::array();
  for (const auto& [site, n] : report.localization) sites.push_back({{"localization", site}, {"count", n}});
  j["localization"] = sites;
  std::ofstream out(dir / "eda_report.json", std::ios::trunc);
  if (!out) throw Error("cannot write " + (dir / "eda_report.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace dermnet
