#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dermnet/random.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

enum class Padding { same, valid };

enum class Activation { relu6, relu };

struct ConvParams {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  Padding padding = Padding::same;
};

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> moving_mean;
  std::vector<float> moving_variance;
  float epsilon = 1e-3f;
};

/// Output extent along one spatial axis plus the leading pad.
/// "same" pads asymmetrically: when the total pad is odd the extra cell
/// goes to the bottom/right.
struct AxisPlan {
  std::size_t out = 0;
  std::size_t pad_before = 0;
};
AxisPlan plan_axis(std::size_t in, std::size_t kernel, std::size_t stride, Padding padding);

/// Cross-correlation. input (N,H,W,Cin), weights (Kh,Kw,Cin,Cout); bias empty
/// or length Cout.
Tensor conv2d(const Tensor& input, const Tensor& weights, std::span<const float> bias,
              const ConvParams& params);

/// Per-channel spatial filter. input (N,H,W,C), weights (Kh,Kw,C).
Tensor depthwise_conv2d(const Tensor& input, const Tensor& weights, const ConvParams& params);

/// Inference-mode batch norm over the innermost axis using moving statistics.
Tensor batchnorm_infer(const Tensor& input, const BatchNormParams& p);

Tensor relu6(const Tensor& input);
Tensor relu(const Tensor& input);
Tensor activate(const Tensor& input, Activation kind);

/// (N,H,W,C) -> (N,C).
Tensor global_avg_pool(const Tensor& input);

/// (N,Cin) x (Cin,Cout) + b.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

/// Inverted dropout. The mask holds the per-element multiplier that was
/// applied: 0 for dropped elements, 1/(1-rate) for survivors, 1 everywhere
/// when not training.
struct DropoutResult {
  Tensor output;
  Tensor mask;
};
DropoutResult dropout(const Tensor& input, float rate, Rng& rng, bool training);

/// Row-wise, max-shifted.
Tensor softmax(const Tensor& logits);

inline constexpr double kProbabilityClip = 1e-7;

/// Mean over rows of -ln(clip(p_true, 1e-7, 1)). Targets must be one-hot.
double cross_entropy_loss(const Tensor& probs, const Tensor& targets);

struct HeadGradients {
  Tensor d_weights;
  Tensor d_bias;
  double loss = 0.0;
};

/// Gradient of the mean cross-entropy of softmax((features*mask) W + b)
/// with respect to W and b. Accumulates in double.
HeadGradients head_gradients(const Tensor& features, const Tensor& mask, const Tensor& weights,
                             const Tensor& bias, const Tensor& targets);

/// One-hot (N,K) matrix from class indices.
Tensor one_hot(std::span<const int> labels, std::size_t num_classes);

}  // namespace dermnet
