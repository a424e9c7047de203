#include <doctest.h>

#include <map>
#include <set>

#include "../support/oracles.hpp"
#include "dermnet/augment.hpp"
#include "dermnet/errors.hpp"

using namespace dermnet;

namespace {

AugmentParams forced(double deg, double zoom = 1.0, bool h = false, bool v = false) {
  AugmentParams p;
  p.rotation_deg = deg;
  p.zoom = zoom;
  p.hflip = h;
  p.vflip = v;
  return p;
}

/// Train/validation index with the given per-class train counts plus a few
/// validation records per class.
DatasetIndex class_index_with(const std::array<std::size_t, kNumClasses>& counts, std::size_t val_per_class = 2) {
  DatasetIndex idx;
  std::size_t serial = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < counts[c] + val_per_class; ++i) {
      MetadataRecord r;
      char id[32];
      std::snprintf(id, sizeof id, "ISIC_%07zu", serial++);
      r.image_id = id;
      r.lesion_id = "HAM_" + r.image_id.substr(5);
      r.dx = int(c);
      r.age = 40.0;
      idx.records.push_back(r);
      idx.split.push_back(i < counts[c] ? Split::train : Split::validation);
    }
  }
  return idx;
}

}  // namespace

TEST_CASE("policy validation and sampling") {
  AugmentPolicy p;
  CHECK_NOTHROW(p.validate());
  p.zoom_range = 1.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = {};
  p.rotation_range = 181;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = {};
  p.rotation_range = -1;
  CHECK_THROWS_AS(p.validate(), ValidationError);

  CHECK(parse_fill_mode("reflect") == FillMode::reflect);
  CHECK(fill_mode_name(FillMode::constant) == "constant");
  CHECK_THROWS_AS(parse_fill_mode("wrap"), ValidationError);

  Rng rng(1);
  AugmentPolicy def;
  for (int i = 0; i < 500; ++i) {
    const AugmentParams s = sample_augment(def, rng);
    CHECK(std::abs(s.rotation_deg) <= 180.0);
    CHECK(s.zoom >= 0.9);
    CHECK(s.zoom <= 1.1);
  }
  Rng a(2), b(2);
  sample_augment(AugmentPolicy::identity(), a);
  sample_augment(def, b);
  CHECK(a.next_u64() == b.next_u64());
  Rng c(3);
  CHECK(sample_augment(AugmentPolicy::identity(), c).is_identity());
}

TEST_CASE("identity policy is bit exact") {
  const Image img = oracle::noise_image(23, 17, 4);
  Rng rng(5);
  CHECK(apply_augment(img, AugmentPolicy::identity(), rng) == img);
  for (FillMode m : {FillMode::nearest, FillMode::reflect, FillMode::constant}) {
    CHECK(apply_affine(img, AugmentParams{}, m, 7) == img);
  }
}

TEST_CASE("flips") {
  const Image img = oracle::noise_image(9, 6, 6);
  const Image once = apply_affine(img, forced(0, 1, true), FillMode::nearest);
  CHECK(once == oracle::hflip(img));
  CHECK(apply_affine(once, forced(0, 1, true), FillMode::nearest) == img);
  const Image v = apply_affine(img, forced(0, 1, false, true), FillMode::nearest);
  CHECK(apply_affine(v, forced(0, 1, false, true), FillMode::nearest) == img);
  CHECK(v.at(0, 0, 0) == img.at(0, 5, 0));
}

TEST_CASE("quarter turns match the permutation oracle") {
  Image pattern(3, 3);
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 3; ++c) pattern.pixels[i * 3 + c] = std::uint8_t(10 * i + c);
  CHECK(apply_affine(pattern, forced(90), FillMode::nearest) == oracle::rot90(pattern));
  // Positive angles turn counter-clockwise: the top-right pixel moves to the top-left.
  CHECK(apply_affine(pattern, forced(90), FillMode::nearest).at(0, 0, 0) == pattern.at(2, 0, 0));

  for (std::size_t n : {4u, 7u, 16u}) {
    const Image img = oracle::noise_image(n, n, n);
    for (FillMode m : {FillMode::nearest, FillMode::reflect, FillMode::constant}) {
      CHECK(apply_affine(img, forced(90), m) == oracle::rot90(img));
      CHECK(apply_affine(img, forced(180), m) == oracle::rot90(oracle::rot90(img)));
      CHECK(apply_affine(img, forced(-90), m) == oracle::rot90(oracle::rot90(oracle::rot90(img))));
    }
  }
}

TEST_CASE("fill modes") {
  Image img(8, 8, 50);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) img.at(x, y, 1) = std::uint8_t(100 + x * 10 + y);
  const Image constant = apply_affine(img, forced(45, 0.9), FillMode::constant, 7);
  CHECK(constant.at(0, 0, 0) == 7);
  const Image nearest = apply_affine(img, forced(45, 0.9), FillMode::nearest);
  CHECK(nearest.at(0, 0, 0) == 50);
  const Image reflect = apply_affine(img, forced(45, 0.9), FillMode::reflect);
  CHECK(reflect.at(0, 0, 0) == 50);
}

TEST_CASE("nearest and reflect stay within the source range") {
  Rng rng(9);
  for (int trial = 0; trial < 30; ++trial) {
    const Image src = oracle::noise_image(12 + trial % 5, 10, std::uint64_t(trial));
    std::array<int, 3> lo{255, 255, 255}, hi{0, 0, 0};
    for (std::size_t i = 0; i < src.pixels.size(); ++i) {
      lo[i % 3] = std::min<int>(lo[i % 3], src.pixels[i]);
      hi[i % 3] = std::max<int>(hi[i % 3], src.pixels[i]);
    }
    AugmentPolicy p;
    p.fill_mode = trial % 2 ? FillMode::nearest : FillMode::reflect;
    const Image out = apply_augment(src, p, rng);
    CHECK(out.width == src.width);
    CHECK(out.height == src.height);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
      CHECK(out.pixels[i] >= lo[i % 3]);
      CHECK(out.pixels[i] <= hi[i % 3]);
    }
  }
}

TEST_CASE("augmentation is deterministic per seed") {
  const Image src = oracle::noise_image(20, 20, 1);
  AugmentPolicy p;
  Rng a(42), b(42);
  CHECK(apply_augment(src, p, a) == apply_augment(src, p, b));
  CHECK(apply_augment(src, p, a) == apply_augment(src, p, b));
}

TEST_CASE("zoom magnifies about the centre") {
  Image img(5, 5, 0);
  img.at(2, 2, 0) = 200;
  const Image out = apply_affine(img, forced(0, 2.0), FillMode::nearest);
  CHECK(out.at(2, 2, 0) == 200);
  CHECK(out.at(3, 2, 0) == 100);
}

TEST_CASE("rebalance_classes") {
  const std::array<std::size_t, kNumClasses> counts{327, 514, 1099, 115, 1113, 6705, 142};
  const DatasetIndex idx = class_index_with(counts);
  AugmentPolicy policy;
  policy.seed = 3;
  const AugmentManifest m = rebalance_classes(idx, AugmentPlan(6000), policy);

  std::map<std::string, std::pair<int, Split>> by_id;
  for (std::size_t i = 0; i < idx.records.size(); ++i) by_id[idx.records[i].image_id] = {idx.records[i].dx, idx.split[i]};

  std::array<std::size_t, kNumClasses> synthetic{};
  std::set<std::string> ids, df_sources;
  for (const auto& e : m.entries) {
    ++synthetic[std::size_t(e.dx)];
    CHECK(ids.insert(e.synthetic_id).second);
    const auto it = by_id.find(e.source_image_id);
    REQUIRE(it != by_id.end());
    CHECK(it->second.first == e.dx);
    CHECK(it->second.second == Split::train);
    if (e.dx == 3) df_sources.insert(e.source_image_id);
  }
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    CHECK(m.original_counts[c] == counts[c]);
    CHECK(m.final_counts[c] == std::max<std::size_t>(counts[c], 6000));
    CHECK(counts[c] + synthetic[c] == m.final_counts[c]);
  }
  CHECK(synthetic[3] == 5885);
  CHECK(df_sources.size() == 115);
  CHECK(synthetic[5] == 0);

  const AugmentManifest again = rebalance_classes(idx, AugmentPlan(6000), policy);
  CHECK(again.entries == m.entries);

  SUBCASE("empty class") {
    auto c2 = counts;
    c2[6] = 0;
    CHECK_THROWS_AS(rebalance_classes(class_index_with(c2, 0), AugmentPlan(10), policy), RebalanceError);
  }
  SUBCASE("classes not selected are untouched") {
    AugmentPlan plan(6000);
    plan.augment.fill(false);
    plan.augment[3] = true;
    const AugmentManifest only = rebalance_classes(idx, plan, policy);
    CHECK(only.entries.size() == 5885);
    CHECK(only.final_counts[0] == 327);
  }
}

TEST_CASE("manifest round trip and materialization") {
  const auto dir = oracle::scratch_dir("augment");
  const DatasetIndex idx = class_index_with({3, 2, 4, 1, 2, 5, 1}, 1);
  std::filesystem::create_directories(dir / "src");
  for (std::size_t i = 0; i < idx.records.size(); ++i) {
    write_png(oracle::noise_image(16, 12, i), dir / "src" / (idx.records[i].image_id + ".png"));
  }
  AugmentPolicy policy;
  policy.seed = 11;
  policy.fill_mode = FillMode::reflect;
  const AugmentManifest m = rebalance_classes(idx, AugmentPlan(5), policy);
  write_manifest_csv(m, dir / "manifest.csv");
  const auto back = read_manifest_csv(dir / "manifest.csv");
  CHECK(back == m.entries);

  materialize_manifest(back, dir / "src", dir / "out");
  for (const auto& e : back) {
    const Image made = read_image(dir / "out" / (e.synthetic_id + ".png"));
    const Image source = read_image(dir / "src" / (e.source_image_id + ".png"));
    CHECK(made == apply_affine(source, e.params, e.fill_mode));
    Rng replay(e.seed);
    CHECK(sample_augment(policy, replay) == e.params);
  }
  std::filesystem::remove_all(dir);
}
