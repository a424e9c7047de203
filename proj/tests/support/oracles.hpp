#pragma once

// Reference implementations used only by the tests. Everything here is
// deliberately naive and independent of the library kernels.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iterator>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dermnet/dataset.hpp"
#include "dermnet/image.hpp"
#include "dermnet/labels.hpp"
#include "dermnet/nn_ops.hpp"
#include "dermnet/random.hpp"
#include "dermnet/tensor.hpp"

namespace oracle {

using dermnet::Padding;
using dermnet::Tensor;

inline long out_extent(long in, long k, long s, Padding p) {
  if (p == Padding::same) return (in + s - 1) / s;
  return (in - k) / s + 1;
}

inline long pad_before(long in, long k, long s, Padding p) {
  if (p == Padding::valid) return 0;
  const long out = (in + s - 1) / s;
  const long total = std::max(0L, (out - 1) * s + k - in);
  return total / 2;
}

/// Six nested loops, double accumulation.
inline Tensor conv2d(const Tensor& in, const Tensor& w, std::span<const float> bias, long sh, long sw, Padding p) {
  const long N = in.dim(0), H = in.dim(1), W = in.dim(2), C = in.dim(3);
  const long KH = w.dim(0), KW = w.dim(1), O = w.dim(3);
  const long OH = out_extent(H, KH, sh, p), OW = out_extent(W, KW, sw, p);
  const long pt = pad_before(H, KH, sh, p), pl = pad_before(W, KW, sw, p);
  Tensor out({size_t(N), size_t(OH), size_t(OW), size_t(O)}, 0.0f);
  for (long n = 0; n < N; ++n)
    for (long y = 0; y < OH; ++y)
      for (long x = 0; x < OW; ++x)
        for (long o = 0; o < O; ++o) {
          double acc = bias.empty() ? 0.0 : bias[o];
          for (long dy = 0; dy < KH; ++dy)
            for (long dx = 0; dx < KW; ++dx)
              for (long c = 0; c < C; ++c) {
                const long iy = y * sh + dy - pt, ix = x * sw + dx - pl;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                acc += double(in.at({size_t(n), size_t(iy), size_t(ix), size_t(c)})) *
                       double(w.at({size_t(dy), size_t(dx), size_t(c), size_t(o)}));
              }
          out.at({size_t(n), size_t(y), size_t(x), size_t(o)}) = float(acc);
        }
  return out;
}

inline Tensor depthwise(const Tensor& in, const Tensor& w, long sh, long sw, Padding p) {
  const long N = in.dim(0), H = in.dim(1), W = in.dim(2), C = in.dim(3);
  const long KH = w.dim(0), KW = w.dim(1);
  const long OH = out_extent(H, KH, sh, p), OW = out_extent(W, KW, sw, p);
  const long pt = pad_before(H, KH, sh, p), pl = pad_before(W, KW, sw, p);
  Tensor out({size_t(N), size_t(OH), size_t(OW), size_t(C)}, 0.0f);
  for (long n = 0; n < N; ++n)
    for (long y = 0; y < OH; ++y)
      for (long x = 0; x < OW; ++x)
        for (long c = 0; c < C; ++c) {
          double acc = 0.0;
          for (long dy = 0; dy < KH; ++dy)
            for (long dx = 0; dx < KW; ++dx) {
              const long iy = y * sh + dy - pt, ix = x * sw + dx - pl;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += double(in.at({size_t(n), size_t(iy), size_t(ix), size_t(c)})) *
                     double(w.at({size_t(dy), size_t(dx), size_t(c)}));
            }
          out.at({size_t(n), size_t(y), size_t(x), size_t(c)}) = float(acc);
        }
  return out;
}

inline Tensor random_tensor(Tensor::Shape shape, dermnet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(dermnet::shape_product(shape));
  for (auto& x : v) x = float(rng.uniform(lo, hi));
  return Tensor(std::move(shape), std::move(v));
}

/// Mean softmax cross-entropy of (x*mask)W + b, entirely in double.
inline double head_loss(const std::vector<double>& x, const std::vector<double>& W, const std::vector<double>& b,
                        const std::vector<int>& labels, std::size_t N, std::size_t C, std::size_t K) {
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    std::vector<double> z(K);
    for (std::size_t k = 0; k < K; ++k) {
      double s = b[k];
      for (std::size_t c = 0; c < C; ++c) s += x[n * C + c] * W[c * K + k];
      z[k] = s;
    }
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    total += -(z[labels[n]] - m - std::log(sum));
  }
  return total / double(N);
}

/// Counter-clockwise quarter turn of a square image, as numpy.rot90:
/// out(row y, col x) = in(row x, col N-1-y).
inline dermnet::Image rot90(const dermnet::Image& in) {
  const std::size_t n = in.width;
  dermnet::Image out(n, n);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = in.at(n - 1 - y, x, c);
  return out;
}

inline dermnet::Image hflip(const dermnet::Image& in) {
  dermnet::Image out(in.width, in.height);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = in.at(in.width - 1 - x, y, c);
  return out;
}

inline dermnet::Image noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  dermnet::Rng rng(seed);
  dermnet::Image img(w, h);
  for (auto& p : img.pixels) p = std::uint8_t(rng.below(256));
  return img;
}

/// Smooth colour gradient, 600x450 like the dermoscopy originals.
inline dermnet::Image gradient_image(std::size_t w = 600, std::size_t h = 450) {
  dermnet::Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(x, y, 0) = std::uint8_t(255 * x / (w - 1));
      img.at(x, y, 1) = std::uint8_t(255 * y / (h - 1));
      img.at(x, y, 2) = std::uint8_t((x + y) % 256);
    }
  return img;
}

/// Synthetic metadata with HAM10000-like structure: some lesions own several
/// images, some ages missing. Returned as CSV text with the standard header.
inline std::string synthetic_metadata_csv(std::size_t lesions, std::uint64_t seed, double missing_age = 0.01) {
  static const char* kSites[] = {"back", "lower extremity", "trunk", "upper extremity", "abdomen", "face",
                                 "chest", "foot", "scalp", "neck", "hand", "ear", "unknown"};
  dermnet::Rng rng(seed);
  std::ostringstream os;
  os << "lesion_id,image_id,dx,dx_type,age,sex,localization\n";
  std::size_t image = 0;
  for (std::size_t l = 0; l < lesions; ++l) {
    const std::size_t copies = rng.uniform() < 0.7 ? 1 : 2 + rng.below(3);
    const auto dx = dermnet::kClassLabels[rng.below(dermnet::kNumClasses)].code;
    const bool missing = rng.uniform() < missing_age;
    const int age = 5 * int(rng.below(18));
    const char* sex = rng.bernoulli(0.5) ? "male" : "female";
    const char* site = kSites[rng.below(std::size(kSites))];
    for (std::size_t c = 0; c < copies; ++c) {
      char lid[32], iid[32];
      std::snprintf(lid, sizeof lid, "HAM_%07zu", l);
      std::snprintf(iid, sizeof iid, "ISIC_%07zu", image++);
      os << lid << ',' << iid << ',' << dx << ",histo,";
      if (!missing) os << age << ".0";
      os << ',' << sex << ',' << site << '\n';
    }
  }
  return os.str();
}

inline std::vector<dermnet::MetadataRecord> synthetic_metadata(std::size_t lesions, std::uint64_t seed) {
  std::istringstream in(synthetic_metadata_csv(lesions, seed));
  return dermnet::parse_metadata(in);
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = std::filesystem::temp_directory_path() /
             ("dermnet_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace oracle
