#include "dermnet/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dermnet/errors.hpp"

namespace dermnet {

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_string(t.shape()));
  }
}

void require_stride(const ConvParams& p) {
  if (p.stride_h == 0 || p.stride_w == 0) throw ValidationError("convolution stride must be positive");
}

}  // namespace

AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding) {
  if (kernel == 0 || stride == 0) throw ValidationError("kernel and stride must be positive");
  AxisPlan plan;
  if (padding == Padding::same) {
    plan.out = (in + stride - 1) / stride;
    const std::size_t needed = (plan.out - 1) * stride + kernel;
    const std::size_t total = needed > in ? needed - in : 0;
    plan.pad_before = total / 2;
  } else {
    if (in < kernel) {
      throw ShapeError("valid padding needs input extent " + std::to_string(in) + " >= kernel " +
                       std::to_string(kernel));
    }
    plan.out = (in - kernel) / stride + 1;
  }
  return plan;
}

Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
              const ConvParams& params) {
  require_rank(input, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  require_stride(params);
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), cin = input.dim(3);
  const std::size_t kh = weights.dim(0), kw = weights.dim(1), cout = weights.dim(3);
  if (weights.dim(2) != cin) {
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) + ", weights expect " +
                     std::to_string(weights.dim(2)));
  }
  if (!bias.empty() && bias.size() != cout) throw ShapeError("conv2d bias length does not match Cout");

  const AxisPlan py = plan_axis(h, kh, params.stride_h, params.padding);
  const AxisPlan px = plan_axis(w, kw, params.stride_w, params.padding);
  Tensor out({n, py.out, px.out, cout}, 0.0f);

  const float* in = input.data().data();
  const float* wt = weights.data().data();
  float* dst = out.data().data();

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < py.out; ++oy) {
      for (std::size_t ox = 0; ox < px.out; ++ox) {
        float* o = dst + ((b * py.out + oy) * px.out + ox) * cout;
        if (!bias.empty()) std::copy(bias.begin(), bias.end(), o);
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * params.stride_h + dy) -
                                    static_cast<std::ptrdiff_t>(py.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * params.stride_w + dx) -
                                      static_cast<std::ptrdiff_t>(px.pad_before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const float* src = in + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * cin;
            const float* k = wt + (dy * kw + dx) * cin * cout;
            for (std::size_t c = 0; c < cin; ++c) {
              const float v = src[c];
              const float* kc = k + c * cout;
              for (std::size_t oc = 0; oc < cout; ++oc) o[oc] += v * kc[oc];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& weights, const ConvParams& params) {
  require_rank(input, 4, "depthwise input");
  require_rank(weights, 3, "depthwise weights");
  require_stride(params);
  const std::size_t n = input.dim(0), h = input.dim(1), w = input.dim(2), ch = input.dim(3);
  const std::size_t kh = weights.dim(0), kw = weights.dim(1);
  if (weights.dim(2) != ch) {
    throw ShapeError("depthwise channel mismatch: input has " + std::to_string(ch) + ", weights expect " +
                     std::to_string(weights.dim(2)));
  }
  const AxisPlan py = plan_axis(h, kh, params.stride_h, params.padding);
  const AxisPlan px = plan_axis(w, kw, params.stride_w, params.padding);
  Tensor out({n, py.out, px.out, ch}, 0.0f);

  const float* in = input.data().data();
  const float* wt = weights.data().data();
  float* dst = out.data().data();

  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oy = 0; oy < py.out; ++oy) {
      for (std::size_t ox = 0; ox < px.out; ++ox) {
        float* o = dst + ((b * py.out + oy) * px.out + ox) * ch;
        for (std::size_t dy = 0; dy < kh; ++dy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * params.stride_h + dy) -
                                    static_cast<std::ptrdiff_t>(py.pad_before);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * params.stride_w + dx) -
                                      static_cast<std::ptrdiff_t>(px.pad_before);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const float* src = in + ((b * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)) * ch;
            const float* k = wt + (dy * kw + dx) * ch;
            for (std::size_t c = 0; c < ch; ++c) o[c] += src[c] * k[c];
          }
        }
      }
    }
  }
  return out;
}

Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& p) {
  const std::size_t ch = input.shape().back();
  if (p.gamma.size() != ch || p.beta.size() != ch || p.moving_mean.size() != ch ||
      p.moving_variance.size() != ch) {
    throw ShapeError("batch norm parameters must have length " + std::to_string(ch));
  }
  if (!(p.epsilon >= 0.0f)) throw ValidationError("batch norm epsilon must be non-negative");

  // Fold into a per-channel scale and shift.
  std::vector<float> scale(ch), shift(ch);
  for (std::size_t c = 0; c < ch; ++c) {
    if (p.moving_variance[c] < 0.0f) throw ValidationError("batch norm variance must be non-negative");
    const double s = static_cast<double>(p.gamma[c]) /
                     std::sqrt(static_cast<double>(p.moving_variance[c]) + static_cast<double>(p.epsilon));
    scale[c] = static_cast<float>(s);
    shift[c] = static_cast<float>(static_cast<double>(p.beta[c]) - s * static_cast<double>(p.moving_mean[c]));
  }
  Tensor out = input;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); i += ch) {
    for (std::size_t c = 0; c < ch; ++c) d[i + c] = d[i + c] * scale[c] + shift[c];
  }
  return out;
}

Tensor relu6(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = std::min(std::max(v, 0.0f), 6.0f);
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = std::max(v, 0.0f);
  return out;
}

Tensor activate(const Tensor& input, Activation kind) {
  return kind == Activation::relu6 ? relu6(input) : relu(input);
}

Tensor global_avg_pool(const Tensor& input) {
  require_rank(input, 4, "global average pool input");
  const std::size_t n = input.dim(0), hw = input.dim(1) * input.dim(2), ch = input.dim(3);
  Tensor out({n, ch}, 0.0f);
  std::vector<double> acc(ch);
  for (std::size_t b = 0; b < n; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const float* src = input.data().data() + b * hw * ch;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < ch; ++c) acc[c] += src[p * ch + c];
    }
    for (std::size_t c = 0; c < ch; ++c) out[b * ch + c] = static_cast<float>(acc[c] / static_cast<double>(hw));
  }
  return out;
}

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require_rank(input, 2, "dense input");
  require_rank(weights, 2, "dense weights");
  const std::size_t n = input.dim(0), cin = input.dim(1), cout = weights.dim(1);
  if (weights.dim(0) != cin) {
    throw ShapeError("dense inner extents differ: " + shape_string(input.shape()) + " x " +
                     shape_string(weights.shape()));
  }
  if (bias.size() != cout) throw ShapeError("dense bias length does not match output width");
  Tensor out({n, cout}, 0.0f);
  std::vector<double> acc(cout);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t o = 0; o < cout; ++o) acc[o] = bias[o];
    for (std::size_t c = 0; c < cin; ++c) {
      const double x = input[r * cin + c];
      const float* wrow = weights.data().data() + c * cout;
      for (std::size_t o = 0; o < cout; ++o) acc[o] += x * wrow[o];
    }
    for (std::size_t o = 0; o < cout; ++o) out[r * cout + o] = static_cast<float>(acc[o]);
  }
  return out;
}

DropoutResult dropout(const Tensor& input, float rate, Rng& rng, bool training) {
  if (!(rate >= 0.0f && rate < 1.0f)) throw ValidationError("dropout rate must lie in [0, 1)");
  if (!training || rate == 0.0f) return {input, Tensor(input.shape(), 1.0f)};
  const float keep_scale = 1.0f / (1.0f - rate);
  Tensor mask(input.shape(), 0.0f);
  Tensor out = input;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float m = rng.bernoulli(rate) ? 0.0f : keep_scale;
    mask[i] = m;
    out[i] *= m;
  }
  return {std::move(out), std::move(mask)};
}

Tensor softmax(const Tensor& logits) {
  require_rank(logits, 2, "softmax input");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape(), 0.0f);
  std::vector<double> e(k);
  for (std::size_t r = 0; r < n; ++r) {
    const float* z = logits.data().data() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      e[j] = std::exp(static_cast<double>(z[j]) - zmax);
      sum += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = static_cast<float>(e[j] / sum);
  }
  return out;
}

namespace {

std::size_t one_hot_index(const Tensor& targets, std::size_t row) {
  const std::size_t k = targets.dim(1);
  std::size_t hot = k;
  for (std::size_t j = 0; j < k; ++j) {
    const float v = targets[row * k + j];
    if (v == 1.0f) {
      if (hot != k) throw ValidationError("target row " + std::to_string(row) + " has more than one hot entry");
      hot = j;
    } else if (v != 0.0f) {
      throw ValidationError("target row " + std::to_string(row) + " is not one-hot");
    }
  }
  if (hot == k) throw ValidationError("target row " + std::to_string(row) + " has no hot entry");
  return hot;
}

}  // namespace

double cross_entropy_loss(const Tensor& probs, const Tensor& targets) {
  require_rank(probs, 2, "probabilities");
  if (probs.shape() != targets.shape()) throw ShapeError("probabilities and targets differ in shape");
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t t = one_hot_index(targets, r);
    const double p = std::clamp(static_cast<double>(probs[r * k + t]), kProbabilityClip, 1.0);
    total -= std::log(p);
  }
  return total / static_cast<double>(n);
}

HeadGradients head_gradients(const Tensor& features, const Tensor& mask, const Tensor& weights,
                             const Tensor& bias, const Tensor& targets) {
  require_rank(features, 2, "features");
  require_rank(weights, 2, "head weights");
  if (mask.shape() != features.shape()) throw ShapeError("dropout mask shape differs from features");
  const std::size_t n = features.dim(0), cin = features.dim(1), k = weights.dim(1);
  if (weights.dim(0) != cin) throw ShapeError("head weights do not match feature width");
  if (bias.size() != k) throw ShapeError("head bias length does not match class count");
  if (targets.rank() != 2 || targets.dim(0) != n || targets.dim(1) != k) {
    throw ShapeError("targets must be (" + std::to_string(n) + "," + std::to_string(k) + ")");
  }

  std::vector<double> x(n * cin);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<double>(features[i]) * mask[i];

  std::vector<double> dw(cin * k, 0.0), db(k, 0.0), z(k), r(k);
  double loss = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t row = 0; row < n; ++row) {
    const std::size_t t = one_hot_index(targets, row);
    for (std::size_t j = 0; j < k; ++j) z[j] = bias[j];
    for (std::size_t c = 0; c < cin; ++c) {
      const double xv = x[row * cin + c];
      for (std::size_t j = 0; j < k; ++j) z[j] += xv * weights[c * k + j];
    }
    const double zmax = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      z[j] = std::exp(z[j] - zmax);
      sum += z[j];
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double p = z[j] / sum;
      if (j == t) loss -= std::log(std::clamp(p, kProbabilityClip, 1.0));
      r[j] = (p - (j == t ? 1.0 : 0.0)) * inv_n;
      db[j] += r[j];
    }
    for (std::size_t c = 0; c < cin; ++c) {
      const double xv = x[row * cin + c];
      for (std::size_t j = 0; j < k; ++j) dw[c * k + j] += xv * r[j];
    }
  }

  HeadGradients g{Tensor(weights.shape(), 0.0f), Tensor(bias.shape(), 0.0f), loss * inv_n};
  for (std::size_t i = 0; i < dw.size(); ++i) g.d_weights[i] = static_cast<float>(dw[i]);
  for (std::size_t j = 0; j < k; ++j) g.d_bias[j] = static_cast<float>(db[j]);
  return g;
}

Tensor one_hot(std::span<const int> labels, std::size_t num_classes) {
  if (labels.empty()) throw ValidationError("one_hot needs at least one label");
  Tensor out({labels.size(), num_classes}, 0.0f);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw ValidationError("label " + std::to_string(labels[i]) + " out of range");
    }
    out[i * num_classes + static_cast<std::size_t>(labels[i])] = 1.0f;
  }
  return out;
}

}  // namespace dermnet
