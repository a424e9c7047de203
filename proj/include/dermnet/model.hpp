#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/nn_ops.hpp"
#include "dermnet/random.hpp"
#include "dermnet/tensor.hpp"

namespace dermnet {

struct ModelConfig {
  std::size_t input_size = 224;
  double width_multiplier = 1.0;
  std::size_t num_blocks = 13;
  std::size_t num_classes = 7;
  float dropout_rate = 0.2f;
  Activation activation = Activation::relu6;

  /// Throws ValidationError.
  void validate() const;
  /// Product of all strides in the (possibly truncated) block plan.
  std::size_t total_stride() const;
  /// Channel count after the last block.
  std::size_t feature_width() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Pointwise width and depthwise stride of the 13 MobileNet-v1 blocks.
struct BlockSpec {
  std::size_t pointwise_filters;
  std::size_t stride;
};
inline constexpr std::array<BlockSpec, 13> kMobileNetBlocks{{
    {64, 1}, {128, 2}, {128, 1}, {256, 2}, {256, 1}, {512, 2}, {512, 1},
    {512, 1}, {512, 1}, {512, 1}, {512, 1}, {1024, 2}, {1024, 1},
}};
inline constexpr std::size_t kStemFilters = 32;
inline constexpr float kBatchNormEpsilon = 1e-3f;

/// Scaled channel count, truncating like the reference framework; at least 1.
std::size_t scaled_filters(std::size_t filters, double width_multiplier);

enum class LayerKind { conv2d, depthwise_conv2d, batch_norm, activation, global_avg_pool, dropout, dense, softmax };
std::string_view layer_kind_name(LayerKind kind);

struct Layer {
  LayerKind kind;
  std::string name;
  ConvParams conv;
  /// Names of the tensors this layer reads, in role order:
  /// conv: kernel; batch norm: gamma, beta, moving_mean, moving_variance;
  /// dense: kernel, bias.
  std::vector<std::string> weights;
};

enum class TrainableBoundary { head_only, all_frozen };

class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(ModelConfig config) : config_(std::move(config)) {}

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  void add_layer(Layer layer) { layers_.push_back(std::move(layer)); }
  /// Throws ValidationError on a duplicate name.
  void add_weight(std::string name, Tensor value);

  bool has_weight(std::string_view name) const;
  /// Throws MissingWeightError.
  const Tensor& weight(std::string_view name) const;
  Tensor& mutable_weight(std::string_view name);
  /// Insertion order; this is also the order of records in a weight file.
  const std::vector<std::string>& weight_names() const noexcept { return order_; }

  /// Layers at index >= boundary carry trainable weights.
  std::size_t trainable_boundary() const noexcept { return boundary_; }
  void set_boundary_index(std::size_t index) noexcept { boundary_ = index; }
  std::vector<std::string> trainable_weight_names() const;
  std::size_t trainable_parameter_count() const;

  /// Index of the head dense layer.
  std::size_t head_layer_index() const;
  const std::string& head_kernel_name() const;
  const std::string& head_bias_name() const;

 private:
  ModelConfig config_;
  std::vector<Layer> layers_;
  std::map<std::string, Tensor, std::less<>> weights_;
  std::vector<std::string> order_;
  std::size_t boundary_ = static_cast<std::size_t>(-1);
};

/// MobileNet-v1 backbone, then GAP -> dropout -> dense -> softmax.
/// Kernels use He-uniform fan-in initialization from `rng`; batch norms start
/// as the identity. The result is all_frozen.
ModelGraph build_mobilenet(const ModelConfig& config, Rng& rng);

ModelGraph set_trainable_boundary(ModelGraph model, TrainableBoundary boundary);

/// Input checks shared by the forward entry points: rank 4, input_size
/// square, 3 channels.
void check_model_input(const ModelGraph& model, const Tensor& batch);

/// Pre-pooling feature map, (N, H/32, W/32, feature_width) for the full plan.
Tensor backbone_feature_map(const ModelGraph& model, const Tensor& batch);

/// Pooled backbone features (N, feature_width). The backbone is frozen, so
/// these can be cached for head training.
Tensor extract_features(const ModelGraph& model, const Tensor& batch);

/// Dropout -> dense -> softmax on pooled features.
Tensor head_forward(const ModelGraph& model, const Tensor& features, bool training, Rng& rng);

/// Class probabilities (N, num_classes).
Tensor forward(const ModelGraph& model, const Tensor& batch, bool training, Rng& rng);

/// Inference-mode forward with no generator needed.
Tensor predict(const ModelGraph& model, const Tensor& batch);

struct LayerSummary {
  std::string name;
  LayerKind kind;
  Tensor::Shape output_shape;  // batch of 1
  std::size_t parameters = 0;
  bool trainable = false;
};

struct ModelSummary {
  std::vector<LayerSummary> layers;
  std::size_t total_parameters = 0;
  std::size_t trainable_parameters = 0;
  std::map<std::string, std::size_t> kind_counts;

  std::size_t count(LayerKind kind) const;
  std::string to_text() const;
};

ModelSummary model_summary(const ModelGraph& model);

}  // namespace dermnet
