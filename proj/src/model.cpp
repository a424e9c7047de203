#include "dermnet/model.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "dermnet/errors.hpp"

namespace dermnet {

std::size_t scaled_filters(std::size_t filters, double width_multiplier) {
  const auto scaled = static_cast<std::size_t>(static_cast<double>(filters) * width_multiplier + 1e-9);
  return std::max<std::size_t>(scaled, 1);
}

void ModelConfig::validate() const {
  if (!(width_multiplier > 0.0)) throw ValidationError("width_multiplier must be positive");
  if (num_blocks > kMobileNetBlocks.size()) {
    throw ValidationError("num_blocks must be at most " + std::to_string(kMobileNetBlocks.size()));
  }
  if (num_classes < 2) throw ValidationError("num_classes must be at least 2");
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) throw ValidationError("dropout_rate must lie in [0, 1)");
  if (input_size == 0 || input_size % total_stride() != 0) {
    throw ValidationError("input_size " + std::to_string(input_size) + " must be a positive multiple of " +
                          std::to_string(total_stride()));
  }
}

std::size_t ModelConfig::total_stride() const {
  std::size_t stride = 2;  // stem
  for (std::size_t i = 0; i < std::min(num_blocks, kMobileNetBlocks.size()); ++i) stride *= kMobileNetBlocks[i].stride;
  return stride;
}

std::size_t ModelConfig::feature_width() const {
  if (num_blocks == 0) return scaled_filters(kStemFilters, width_multiplier);
  return scaled_filters(kMobileNetBlocks[num_blocks - 1].pointwise_filters, width_multiplier);
}

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "Conv2D";
    case LayerKind::depthwise_conv2d: return "DepthwiseConv2D";
    case LayerKind::batch_norm: return "BatchNormalization";
    case LayerKind::activation: return "ReLU";
    case LayerKind::global_avg_pool: return "GlobalAveragePooling2D";
    case LayerKind::dropout: return "Dropout";
    case LayerKind::dense: return "Dense";
    case LayerKind::softmax: return "Softmax";
  }
  return "Unknown";
}

void ModelGraph::add_weight(std::string name, Tensor value) {
  if (weights_.contains(name)) throw ValidationError("duplicate weight name: " + name);
  order_.push_back(name);
  weights_.emplace(std::move(name), std::move(value));
}

bool ModelGraph::has_weight(std::string_view name) const { return weights_.find(name) != weights_.end(); }

const Tensor& ModelGraph::weight(std::string_view name) const {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw MissingWeightError(std::string(name));
  return it->second;
}

Tensor& ModelGraph::mutable_weight(std::string_view name) {
  auto it = weights_.find(name);
  if (it == weights_.end()) throw MissingWeightError(std::string(name));
  return it->second;
}

std::vector<std::string> ModelGraph::trainable_weight_names() const {
  std::vector<std::string> names;
  for (std::size_t i = boundary_; i < layers_.size(); ++i) {
    for (const auto& w : layers_[i].weights) names.push_back(w);
  }
  return names;
}

std::size_t ModelGraph::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& name : trainable_weight_names()) n += weight(name).size();
  return n;
}

std::size_t ModelGraph::head_layer_index() const {
  for (std::size_t i = layers_.size(); i-- > 0;) {
    if (layers_[i].kind == LayerKind::dense) return i;
  }
  throw ValidationError("model has no dense head layer");
}

const std::string& ModelGraph::head_kernel_name() const { return layers_[head_layer_index()].weights.at(0); }
const std::string& ModelGraph::head_bias_name() const { return layers_[head_layer_index()].weights.at(1); }

namespace {

Tensor he_uniform(Tensor::Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape), 0.0f);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-limit, limit));
  return t;
}

void add_batch_norm(ModelGraph& g, const std::string& name, std::size_t channels) {
  Layer layer{LayerKind::batch_norm, name, {}, {}};
  for (const char* field : {"gamma", "beta", "moving_mean", "moving_variance"}) {
    const std::string wname = name + "/" + field;
    const float init = (std::string_view(field) == "gamma" || std::string_view(field) == "moving_variance") ? 1.0f : 0.0f;
    g.add_weight(wname, Tensor({channels}, init));
    layer.weights.push_back(wname);
  }
  g.add_layer(std::move(layer));
}

void add_activation(ModelGraph& g, const std::string& name) { g.add_layer({LayerKind::activation, name, {}, {}}); }

BatchNormParams batch_norm_params(const ModelGraph& g, const Layer& layer) {
  auto vec = [&](std::size_t i) {
    const auto d = g.weight(layer.weights.at(i)).data();
    return std::vector<float>(d.begin(), d.end());
  };
  return {vec(0), vec(1), vec(2), vec(3), kBatchNormEpsilon};
}

enum class Stop { before_pool, after_pool };

Tensor run_backbone(const ModelGraph& model, const Tensor& batch, Stop stop) {
  check_model_input(model, batch);
  Tensor x = batch;
  for (const auto& layer : model.layers()) {
    switch (layer.kind) {
      case LayerKind::conv2d:
        x = conv2d(x, model.weight(layer.weights.at(0)), {}, layer.conv);
        break;
      case LayerKind::depthwise_conv2d:
        x = depthwise_conv2d(x, model.weight(layer.weights.at(0)), layer.conv);
        break;
      case LayerKind::batch_norm:
        x = batchnorm_infer(x, batch_norm_params(model, layer));
        break;
      case LayerKind::activation:
        x = activate(x, model.config().activation);
        break;
      case LayerKind::global_avg_pool:
        return stop == Stop::before_pool ? x : global_avg_pool(x);
      default:
        throw ValidationError("unexpected layer before pooling: " + layer.name);
    }
  }
  throw ValidationError("model has no global average pooling layer");
}

}  // namespace

ModelGraph build_mobilenet(const ModelConfig& config, Rng& rng) {
  config.validate();
  ModelGraph g(config);
  const double alpha = config.width_multiplier;

  std::size_t channels = scaled_filters(kStemFilters, alpha);
  g.add_weight("conv1/kernel", he_uniform({3, 3, 3, channels}, 3 * 3 * 3, rng));
  g.add_layer({LayerKind::conv2d, "conv1", {2, 2, Padding::same}, {"conv1/kernel"}});
  add_batch_norm(g, "conv1_bn", channels);
  add_activation(g, "conv1_relu");

  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    const auto& spec = kMobileNetBlocks[b];
    const std::string id = std::to_string(b + 1);

    const std::string dw = "conv_dw_" + id;
    g.add_weight(dw + "/depthwise_kernel", he_uniform({3, 3, channels}, 3 * 3, rng));
    g.add_layer({LayerKind::depthwise_conv2d, dw, {spec.stride, spec.stride, Padding::same}, {dw + "/depthwise_kernel"}});
    add_batch_norm(g, dw + "_bn", channels);
    add_activation(g, dw + "_relu");

    const std::string pw = "conv_pw_" + id;
    const std::size_t out = scaled_filters(spec.pointwise_filters, alpha);
    g.add_weight(pw + "/kernel", he_uniform({1, 1, channels, out}, channels, rng));
    g.add_layer({LayerKind::conv2d, pw, {1, 1, Padding::same}, {pw + "/kernel"}});
    add_batch_norm(g, pw + "_bn", out);
    add_activation(g, pw + "_relu");
    channels = out;
  }

  g.add_layer({LayerKind::global_avg_pool, "global_average_pooling", {}, {}});
  g.add_layer({LayerKind::dropout, "dropout", {}, {}});
  g.add_weight("dense/kernel", he_uniform({channels, config.num_classes}, channels, rng));
  g.add_weight("dense/bias", Tensor({config.num_classes}, 0.0f));
  g.add_layer({LayerKind::dense, "dense", {}, {"dense/kernel", "dense/bias"}});
  g.add_layer({LayerKind::softmax, "softmax", {}, {}});
  g.set_boundary_index(g.layers().size());
  return g;
}

ModelGraph set_trainable_boundary(ModelGraph model, TrainableBoundary boundary) {
  model.set_boundary_index(boundary == TrainableBoundary::head_only ? model.head_layer_index()
                                                                    : model.layers().size());
  return model;
}

void check_model_input(const ModelGraph& model, const Tensor& batch) {
  const std::size_t s = model.config().input_size;
  if (batch.rank() != 4 || batch.dim(1) != s || batch.dim(2) != s || batch.dim(3) != 3) {
    throw ShapeError("model expects input (N," + std::to_string(s) + "," + std::to_string(s) + ",3), got " +
                     shape_string(batch.shape()));
  }
}

Tensor backbone_feature_map(const ModelGraph& model, const Tensor& batch) {
  return run_backbone(model, batch, Stop::before_pool);
}

Tensor extract_features(const ModelGraph& model, const Tensor& batch) {
  return run_backbone(model, batch, Stop::after_pool);
}

Tensor head_forward(const ModelGraph& model, const Tensor& features, bool training, Rng& rng) {
  Tensor x = dropout(features, model.config().dropout_rate, rng, training).output;
  x = dense_forward(x, model.weight(model.head_kernel_name()), model.weight(model.head_bias_name()));
  return softmax(x);
}

Tensor forward(const ModelGraph& model, const Tensor& batch, bool training, Rng& rng) {
  return head_forward(model, extract_features(model, batch), training, rng);
}

Tensor predict(const ModelGraph& model, const Tensor& batch) {
  Rng unused(0);
  return forward(model, batch, false, unused);
}

std::size_t ModelSummary::count(LayerKind kind) const {
  auto it = kind_counts.find(std::string(layer_kind_name(kind)));
  return it == kind_counts.end() ? 0 : it->second;
}

std::string ModelSummary::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "Layer" << std::setw(24) << "Kind" << std::setw(20) << "Output shape"
     << std::right << std::setw(12) << "Params" << '\n';
  os << std::string(84, '-') << '\n';
  for (const auto& l : layers) {
    os << std::left << std::setw(28) << l.name << std::setw(24) << layer_kind_name(l.kind) << std::setw(20)
       << shape_string(l.output_shape) << std::right << std::setw(12) << l.parameters << '\n';
  }
  os << std::string(84, '-') << '\n';
  os << "Total params: " << total_parameters << '\n';
  os << "Trainable params: " << trainable_parameters << '\n';
  os << "Non-trainable params: " << total_parameters - trainable_parameters << '\n';
  os << "Layer census:";
  for (const auto& [kind, n] : kind_counts) os << ' ' << kind << '=' << n;
  os << '\n';
  return os.str();
}

ModelSummary model_summary(const ModelGraph& model) {
  ModelSummary summary;
  const auto& cfg = model.config();
  Tensor::Shape shape{1, cfg.input_size, cfg.input_size, 3};
  const auto& layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& layer = layers[i];
    switch (layer.kind) {
      case LayerKind::conv2d: {
        const Tensor& k = model.weight(layer.weights.at(0));
        shape = {1, plan_axis(shape[1], k.dim(0), layer.conv.stride_h, layer.conv.padding).out,
                 plan_axis(shape[2], k.dim(1), layer.conv.stride_w, layer.conv.padding).out, k.dim(3)};
        break;
      }
      case LayerKind::depthwise_conv2d: {
        const Tensor& k = model.weight(layer.weights.at(0));
        shape = {1, plan_axis(shape[1], k.dim(0), layer.conv.stride_h, layer.conv.padding).out,
                 plan_axis(shape[2], k.dim(1), layer.conv.stride_w, layer.conv.padding).out, shape[3]};
        break;
      }
      case LayerKind::global_avg_pool:
        shape = {1, shape.back()};
        break;
      case LayerKind::dense:
        shape = {1, model.weight(layer.weights.at(0)).dim(1)};
        break;
      default:
        break;
    }
    LayerSummary row{layer.name, layer.kind, shape, 0, i >= model.trainable_boundary()};
    for (const auto& w : layer.weights) row.parameters += model.weight(w).size();
    summary.total_parameters += row.parameters;
    if (row.trainable) summary.trainable_parameters += row.parameters;
    ++summary.kind_counts[std::string(layer_kind_name(layer.kind))];
    summary.layers.push_back(std::move(row));
  }
  return summary;
}

}  // namespace dermnet
