#include "dermnet/train.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dermnet/errors.hpp"
#include "dermnet/nn_ops.hpp"

namespace dermnet {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ValidationError("adam_beta1 must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ValidationError("adam_beta2 must lie in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw ValidationError("adam_epsilon must be positive");
}

AdamState AdamState::zeros_like(std::span<const Tensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape(), 0.0f);
    s.v.emplace_back(p.shape(), 0.0f);
  }
  return s;
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ValidationError("adam_step: parameter, gradient and state counts differ");
  }
  ++state.t;
  const double b1 = config.adam_beta1, b2 = config.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (g.shape() != p.shape() || m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step: shape mismatch for tensor " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = b1 * m[i] + (1.0 - b1) * gi;
      const double vi = b2 * v[i] + (1.0 - b2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      p[i] = static_cast<float>(p[i] - config.learning_rate * m_hat / (std::sqrt(v_hat) + config.adam_epsilon));
    }
  }
}

FeatureSet extract_feature_set(const ModelGraph& model, const LabeledBatch& batch) {
  if (batch.images.rank() != 4 || batch.images.dim(0) != batch.labels.size()) {
    throw ValidationError("image batch and labels differ in count");
  }
  const std::size_t per = batch.images.size() / batch.images.dim(0);
  const auto& shape = batch.images.shape();
  return extract_feature_set(
      model, batch.labels.size(),
      [&](std::size_t i) {
        std::vector<float> one(batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * per),
                               batch.images.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
        return Tensor({1, shape[1], shape[2], shape[3]}, std::move(one));
      },
      batch.labels);
}

FeatureSet extract_feature_set(const ModelGraph& model, std::size_t count,
                               const std::function<Tensor(std::size_t)>& load_image, std::vector<int> labels) {
  if (count == 0) throw ValidationError("cannot extract features from an empty dataset");
  if (labels.size() != count) throw ValidationError("label count does not match image count");
  const std::size_t width = model.config().feature_width();
  std::vector<float> features(count * width);
  for (std::size_t i = 0; i < count; ++i) {
    const Tensor f = extract_features(model, load_image(i));
    std::copy(f.data().begin(), f.data().end(), features.begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return {Tensor({count, width}, std::move(features)), std::move(labels)};
}

namespace {

void check_features(const ModelGraph& model, const FeatureSet& set, const char* what) {
  if (set.size() == 0) throw ValidationError(std::string(what) + " set is empty");
  const Tensor& w = model.weight(model.head_kernel_name());
  if (set.features.rank() != 2 || set.features.dim(0) != set.size() || set.features.dim(1) != w.dim(0)) {
    throw ValidationError(std::string(what) + " features must be (N," + std::to_string(w.dim(0)) + ")");
  }
  for (int label : set.labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= model.config().num_classes) {
      throw ValidationError(std::string(what) + " set has an out-of-range label");
    }
  }
}

}  // namespace

TrainResult train_head(ModelGraph model, const FeatureSet& train, const FeatureSet& validation,
                       const TrainConfig& config) {
  config.validate();
  if (model.trainable_boundary() != model.head_layer_index()) {
    throw ValidationError("train_head requires a head_only trainable boundary");
  }
  check_features(model, train, "training");
  check_features(model, validation, "validation");

  const std::size_t n = train.size();
  const std::size_t width = train.features.dim(1);
  const std::size_t classes = model.config().num_classes;
  const float rate = model.config().dropout_rate;

  std::array<Tensor, 2> params{model.weight(model.head_kernel_name()), model.weight(model.head_bias_name())};
  AdamState adam = AdamState::zeros_like(params);
  Rng shuffle_rng(derive_seed(config.seed, 1));
  Rng dropout_rng(derive_seed(config.seed, 2));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result{std::move(model), {}};

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    if (config.shuffle) {
      for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t rows = std::min(config.batch_size, n - start);
      Tensor x({rows, width}, 0.0f);
      std::vector<int> y(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t src = order[start + r];
        std::copy_n(train.features.data().begin() + static_cast<std::ptrdiff_t>(src * width), width,
                    x.data().begin() + static_cast<std::ptrdiff_t>(r * width));
        y[r] = train.labels[src];
      }
      const Tensor mask = dropout(x, rate, dropout_rng, true).mask;
      HeadGradients g = head_gradients(x, mask, params[0], params[1], one_hot(y, classes));
      const std::array<Tensor, 2> grads{std::move(g.d_weights), std::move(g.d_bias)};
      adam_step(params, grads, adam, config);
    }
    result.model.mutable_weight(result.model.head_kernel_name()) = params[0];
    result.model.mutable_weight(result.model.head_bias_name()) = params[1];

    const EvaluationResult tr = evaluate_features(result.model, train);
    const EvaluationResult va = evaluate_features(result.model, validation);
    result.history.push_back({epoch, tr.mean_loss, tr.top1, tr.top2, tr.top3, va.mean_loss, va.top1, va.top2, va.top3});
  }
  return result;
}

TrainResult train_head(ModelGraph model, const LabeledBatch& train, const LabeledBatch& validation,
                       const TrainConfig& config) {
  const FeatureSet tf = extract_feature_set(model, train);
  const FeatureSet vf = extract_feature_set(model, validation);
  return train_head(std::move(model), tf, vf, config);
}

EvaluationResult evaluate_predictions(const Tensor& probabilities, std::span<const int> labels) {
  if (probabilities.rank() != 2 || probabilities.dim(0) == 0) throw ValidationError("evaluation needs predictions");
  if (labels.size() != probabilities.dim(0)) throw ValidationError("label count does not match prediction rows");
  const std::size_t classes = probabilities.dim(1);
  EvaluationResult r;
  const std::vector<int> predicted = argmax_rows(probabilities);
  r.confusion = confusion_matrix(labels, predicted, classes);
  r.report = build_report(r.confusion);
  r.top1 = top_k_accuracy(probabilities, labels, 1);
  r.top2 = top_k_accuracy(probabilities, labels, std::min<std::size_t>(2, classes));
  r.top3 = top_k_accuracy(probabilities, labels, std::min<std::size_t>(3, classes));
  r.mean_loss = cross_entropy_loss(probabilities, one_hot(labels, classes));
  return r;
}

EvaluationResult evaluate_features(const ModelGraph& model, const FeatureSet& set) {
  check_features(model, set, "evaluation");
  Rng unused(0);
  return evaluate_predictions(head_forward(model, set.features, false, unused), set.labels);
}

EvaluationResult evaluate(const ModelGraph& model, const LabeledBatch& batch) {
  if (batch.labels.empty()) throw ValidationError("evaluation set is empty");
  return evaluate_features(model, extract_feature_set(model, batch));
}

std::string history_csv(std::span<const EpochLog> history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,train_acc,train_top2,train_top3,val_loss,val_acc,val_top2,val_top3\n";
  for (const auto& e : history) {
    os << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.train_top2 << ',' << e.train_top3 << ','
       << e.val_loss << ',' << e.val_acc << ',' << e.val_top2 << ',' << e.val_top3 << '\n';
  }
  return os.str();
}

void write_history_csv(std::span<const EpochLog> history, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << history_csv(history);
}

}  // namespace dermnet
