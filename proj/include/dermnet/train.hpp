#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dermnet/metrics.hpp"
#include "dermnet/model.hpp"

namespace dermnet {

struct TrainConfig {
  std::size_t batch_size = 10;
  std::size_t epochs = 50;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-7;
  std::uint64_t seed = 0;
  bool shuffle = true;

  void validate() const;
};

/// First and second moments per trainable tensor, plus the shared step count.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  static AdamState zeros_like(std::span<const Tensor> params);
};

/// One bias-corrected Adam update of every tensor in `params`; increments t
/// once. Moment arithmetic runs in double.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state, const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_acc = 0.0;
  double train_top2 = 0.0;
  double train_top3 = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_top2 = 0.0;
  double val_top3 = 0.0;

  friend bool operator==(const EpochLog&, const EpochLog&) = default;
};

/// Preprocessed images (N,H,W,3) with class indices.
struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;
};

/// Pooled backbone features (N,C) with class indices.
struct FeatureSet {
  Tensor features;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
};

FeatureSet extract_feature_set(const ModelGraph& model, const LabeledBatch& batch);

/// Streams `count` single images, each (1,H,W,3), through the frozen
/// backbone so that only the pooled features are kept in memory.
FeatureSet extract_feature_set(const ModelGraph& model, std::size_t count,
                               const std::function<Tensor(std::size_t)>& load_image, std::vector<int> labels);

struct TrainResult {
  ModelGraph model;
  std::vector<EpochLog> history;
};

/// Adam on the head dense layer over cached backbone features. Each epoch
/// shuffles (seeded), applies dropout, takes one step per batch including the
/// final partial batch, then logs inference-mode metrics for both sets.
/// The model must have a head_only boundary.
TrainResult train_head(ModelGraph model, const FeatureSet& train, const FeatureSet& validation,
                       const TrainConfig& config);
TrainResult train_head(ModelGraph model, const LabeledBatch& train, const LabeledBatch& validation,
                       const TrainConfig& config);

struct EvaluationResult {
  ConfusionMatrix confusion;
  ClassReport report;
  double top1 = 0.0;
  double top2 = 0.0;
  double top3 = 0.0;
  double mean_loss = 0.0;
};

/// Metrics for precomputed probabilities. Top-k uses min(k, K).
EvaluationResult evaluate_predictions(const Tensor& probabilities, std::span<const int> labels);
EvaluationResult evaluate_features(const ModelGraph& model, const FeatureSet& set);
EvaluationResult evaluate(const ModelGraph& model, const LabeledBatch& batch);

std::string history_csv(std::span<const EpochLog> history);
void write_history_csv(std::span<const EpochLog> history, const std::filesystem::path& path);

}  // namespace dermnet
