#include "dermnet/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "dermnet/csv.hpp"
#include "dermnet/errors.hpp"

namespace dermnet {

std::string_view fill_mode_name(FillMode mode) {
  switch (mode) {
    case FillMode::nearest: return "nearest";
    case FillMode::reflect: return "reflect";
    case FillMode::constant: return "constant";
  }
  return "nearest";
}

FillMode parse_fill_mode(std::string_view name) {
  if (name == "nearest") return FillMode::nearest;
  if (name == "reflect") return FillMode::reflect;
  if (name == "constant") return FillMode::constant;
  throw ValidationError("unknown fill mode '" + std::string(name) + "'");
}

void AugmentPolicy::validate() const {
  if (!(rotation_range >= 0.0 && rotation_range <= 180.0)) throw ValidationError("rotation_range must lie in [0, 180]");
  if (!(zoom_range >= 0.0 && zoom_range < 1.0)) throw ValidationError("zoom_range must lie in [0, 1)");
}

AugmentPolicy AugmentPolicy::identity() {
  AugmentPolicy p;
  p.rotation_range = 0.0;
  p.zoom_range = 0.0;
  p.horizontal_flip = false;
  p.vertical_flip = false;
  return p;
}

AugmentParams sample_augment(const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  AugmentParams p;
  p.rotation_deg = rng.uniform(-policy.rotation_range, policy.rotation_range) + 0.0;  // no -0
  p.zoom = rng.uniform(1.0 - policy.zoom_range, 1.0 + policy.zoom_range);
  const bool h = rng.bernoulli(0.5);
  const bool v = rng.bernoulli(0.5);
  p.hflip = policy.horizontal_flip && h;
  p.vflip = policy.vertical_flip && v;
  return p;
}

namespace {

// Maps an integer tap outside [0, n) back into range, or -1 for constant fill.
std::ptrdiff_t resolve_index(std::ptrdiff_t i, std::ptrdiff_t n, FillMode fill) {
  if (i >= 0 && i < n) return i;
  switch (fill) {
    case FillMode::nearest:
      return std::clamp<std::ptrdiff_t>(i, 0, n - 1);
    case FillMode::reflect: {
      // Half-sample symmetric: ... c b a | a b c ... c b a | a b c ...
      const std::ptrdiff_t period = 2 * n;
      std::ptrdiff_t m = i % period;
      if (m < 0) m += period;
      return m < n ? m : period - 1 - m;
    }
    case FillMode::constant:
      return -1;
  }
  return -1;
}

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

Image apply_affine(const Image& image, const AugmentParams& params, FillMode fill, std::uint8_t fill_value) {
  if (params.is_identity()) return image;
  if (!(params.zoom > 0.0)) throw ValidationError("zoom must be positive");

  const auto w = static_cast<std::ptrdiff_t>(image.width);
  const auto h = static_cast<std::ptrdiff_t>(image.height);
  const double cx = (static_cast<double>(image.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(image.height) - 1.0) / 2.0;
  const double theta = params.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta), sin_t = std::sin(theta);
  const double inv_zoom = 1.0 / params.zoom;
  const double fx = params.hflip ? -1.0 : 1.0;
  const double fy = params.vflip ? -1.0 : 1.0;

  Image out(image.width, image.height);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      // Inverse map: undo zoom, rotate by -theta, undo flips.
      const double dx = (static_cast<double>(x) - cx) * inv_zoom;
      const double dy = (static_cast<double>(y) - cy) * inv_zoom;
      const double sx = snap(cx + fx * (dx * cos_t - dy * sin_t));
      const double sy = snap(cy + fy * (dx * sin_t + dy * cos_t));

      const auto x0 = static_cast<std::ptrdiff_t>(std::floor(sx));
      const auto y0 = static_cast<std::ptrdiff_t>(std::floor(sy));
      const double ax = sx - static_cast<double>(x0);
      const double ay = sy - static_cast<double>(y0);
      const std::ptrdiff_t xs[2] = {resolve_index(x0, w, fill), resolve_index(x0 + 1, w, fill)};
      const std::ptrdiff_t ys[2] = {resolve_index(y0, h, fill), resolve_index(y0 + 1, h, fill)};
      const double wx[2] = {1.0 - ax, ax};
      const double wy[2] = {1.0 - ay, ay};

      for (std::size_t c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int j = 0; j < 2; ++j) {
          for (int i = 0; i < 2; ++i) {
            const double weight = wx[i] * wy[j];
            if (weight == 0.0) continue;
            const double sample = (xs[i] < 0 || ys[j] < 0)
                                      ? static_cast<double>(fill_value)
                                      : image.at(static_cast<std::size_t>(xs[i]), static_cast<std::size_t>(ys[j]), c);
            v += weight * sample;
          }
        }
        out.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), c) =
            static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

Image apply_augment(const Image& image, const AugmentPolicy& policy, Rng& rng) {
  return apply_affine(image, sample_augment(policy, rng), policy.fill_mode, policy.fill_value);
}

AugmentManifest rebalance_classes(const DatasetIndex& index, const AugmentPlan& plan, const AugmentPolicy& policy) {
  policy.validate();
  std::array<std::vector<const MetadataRecord*>, kNumClasses> sources;
  for (std::size_t i = 0; i < index.records.size(); ++i) {
    if (index.split.at(i) == Split::train) sources[index.records[i].dx].push_back(&index.records[i]);
  }
  for (auto& s : sources) {
    std::sort(s.begin(), s.end(), [](const auto* a, const auto* b) { return a->image_id < b->image_id; });
  }

  AugmentManifest manifest;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::size_t have = sources[c].size();
    manifest.original_counts[c] = have;
    manifest.final_counts[c] = have;
    if (!plan.augment[c] || have >= plan.targets[c]) continue;
    if (have == 0) {
      throw RebalanceError("class " + std::string(kClassLabels[c].code) + " has no training images to augment");
    }
    const std::size_t needed = plan.targets[c] - have;
    for (std::size_t draw = 0; draw < needed; ++draw) {
      const std::size_t src = draw % have;
      ManifestEntry e;
      char id[64];
      std::snprintf(id, sizeof id, "aug_%s_%06zu", std::string(kClassLabels[c].code).c_str(), draw);
      e.synthetic_id = id;
      e.source_image_id = sources[c][src]->image_id;
      e.dx = static_cast<int>(c);
      e.seed = derive_seed(policy.seed, c, src, draw);
      Rng rng(e.seed);
      e.params = sample_augment(policy, rng);
      e.fill_mode = policy.fill_mode;
      manifest.entries.push_back(std::move(e));
    }
    manifest.final_counts[c] = plan.targets[c];
  }
  return manifest;
}

namespace {

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(const std::string& s, std::size_t line) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError(line, "malformed number '" + s + "'");
  return v;
}

}  // namespace

void write_manifest_csv(const AugmentManifest& manifest, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "synthetic_id,source_image_id,dx,rotation_deg,zoom,hflip,vflip,fill_mode,seed\n";
  for (const auto& e : manifest.entries) {
    out << csv::join({e.synthetic_id, e.source_image_id, std::string(kClassLabels[e.dx].code),
                      shortest(e.params.rotation_deg), shortest(e.params.zoom), e.params.hflip ? "1" : "0",
                      e.params.vflip ? "1" : "0", std::string(fill_mode_name(e.fill_mode)), std::to_string(e.seed)})
        << '\n';
  }
}

std::vector<ManifestEntry> read_manifest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!csv::next_line(in, line, line_no)) return {};
  std::vector<ManifestEntry> entries;
  while (csv::next_line(in, line, line_no)) {
    const auto f = csv::split_line(line);
    if (f.size() != 9) throw ParseError(line_no, "manifest rows need 9 fields");
    ManifestEntry e;
    e.synthetic_id = f[0];
    e.source_image_id = f[1];
    const auto dx = class_index(f[2]);
    if (!dx) throw ParseError(line_no, "unknown diagnosis code '" + f[2] + "'");
    e.dx = *dx;
    e.params.rotation_deg = parse_number(f[3], line_no);
    e.params.zoom = parse_number(f[4], line_no);
    e.params.hflip = f[5] == "1";
    e.params.vflip = f[6] == "1";
    e.fill_mode = parse_fill_mode(f[7]);
    std::uint64_t seed = 0;
    auto res = std::from_chars(f[8].data(), f[8].data() + f[8].size(), seed);
    if (res.ec != std::errc()) throw ParseError(line_no, "malformed seed");
    e.seed = seed;
    entries.push_back(std::move(e));
  }
  return entries;
}

void materialize_manifest(std::span<const ManifestEntry> entries, const std::filesystem::path& source_root,
                          const std::filesystem::path& out_dir, std::uint8_t fill_value) {
  std::filesystem::create_directories(out_dir);
  std::string cached_id;
  Image cached;
  for (const auto& e : entries) {
    if (e.source_image_id != cached_id) {
      const auto path = find_image_file(source_root, e.source_image_id);
      if (!path) throw Error("source image not found: " + e.source_image_id);
      cached = read_image(*path);
      cached_id = e.source_image_id;
    }
    write_png(apply_affine(cached, e.params, e.fill_mode, fill_value), out_dir / (e.synthetic_id + ".png"));
  }
}

}  // namespace dermnet
