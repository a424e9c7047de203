#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "dermnet/errors.hpp"
#include "dermnet/train.hpp"

using namespace dermnet;

namespace {

// Corners of the RGB cube: the most distinct constant inputs after scaling.
constexpr std::array<std::array<std::uint8_t, 3>, 7> kColours{{
    {255, 0, 0}, {0, 255, 0}, {0, 0, 255}, {255, 255, 0}, {255, 0, 255}, {0, 255, 255}, {255, 255, 255},
}};

/// Seven classes, `per_class` identical constant-colour images each.
LabeledBatch colour_set(std::size_t size, std::size_t per_class) {
  std::vector<Image> images;
  std::vector<int> labels;
  for (std::size_t c = 0; c < 7; ++c) {
    Image img(size, size);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = kColours[c][i % 3];
    for (std::size_t k = 0; k < per_class; ++k) {
      images.push_back(img);
      labels.push_back(int(c));
    }
  }
  return {preprocess_batch(images), labels};
}

ModelGraph small_model(std::uint64_t seed, std::size_t input = 32) {
  ModelConfig c;
  c.input_size = input;
  c.width_multiplier = 0.25;
  Rng rng(seed);
  return set_trainable_boundary(build_mobilenet(c, rng), TrainableBoundary::head_only);
}

}  // namespace

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK(c.batch_size == 10);
  CHECK(c.epochs == 50);
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.adam_beta1 = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.adam_epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("adam_step") {
  TrainConfig cfg;
  SUBCASE("zero gradient leaves parameters unchanged") {
    std::vector<Tensor> params{Tensor({3}, std::vector<float>{1, -2, 3})};
    const auto before = params;
    std::vector<Tensor> grads{Tensor({3}, 0.0f)};
    AdamState s = AdamState::zeros_like(params);
    adam_step(params, grads, s, cfg);
    CHECK(params == before);
    CHECK(s.t == 1);
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    std::vector<Tensor> params{Tensor({2}, 0.0f)};
    std::vector<Tensor> grads{Tensor({2}, std::vector<float>{0.5f, -0.25f})};
    AdamState s = AdamState::zeros_like(params);
    adam_step(params, grads, s, cfg);
    CHECK(params[0][0] == doctest::Approx(-1e-3).epsilon(1e-5));
    CHECK(params[0][1] == doctest::Approx(1e-3).epsilon(1e-5));
    // m-hat after one step is g: m = (1-b1) g, divided by (1-b1).
    CHECK(double(s.m[0][0]) / (1.0 - cfg.adam_beta1) == doctest::Approx(0.5).epsilon(1e-6));
    for (float v : s.v[0].data()) CHECK(v >= 0.0f);
  }
  SUBCASE("a step decreases a quadratic") {
    std::vector<Tensor> params{Tensor({1}, 2.0f)};
    AdamState s = AdamState::zeros_like(params);
    for (int i = 0; i < 5; ++i) {
      const float x = params[0][0];
      std::vector<Tensor> grads{Tensor({1}, 2.0f * x)};
      adam_step(params, grads, s, cfg);
      CHECK(params[0][0] * params[0][0] < x * x);
    }
    CHECK(s.t == 5);
  }
  SUBCASE("shape mismatch") {
    std::vector<Tensor> params{Tensor({2}, 0.0f)};
    std::vector<Tensor> grads{Tensor({3}, 0.0f)};
    AdamState s = AdamState::zeros_like(params);
    CHECK_THROWS_AS(adam_step(params, grads, s, cfg), ShapeError);
  }
}

TEST_CASE("overfit on the colour set, deterministically") {
  // A random frozen backbone maps constant colours to nearly collinear
  // features, so the head needs a larger step than the 1e-3 default.
  const LabeledBatch data = colour_set(224, 10);
  TrainConfig cfg;
  cfg.seed = 17;
  cfg.learning_rate = 0.03;
  const TrainResult a = train_head(small_model(1, 224), data, data, cfg);
  const TrainResult b = train_head(small_model(1, 224), data, data, cfg);
  REQUIRE(a.history.size() == 50);
  CHECK(a.history == b.history);
  CHECK(a.history.back().train_acc == 1.0);
  for (const auto& name : a.model.weight_names()) CHECK(a.model.weight(name) == b.model.weight(name));
  for (const auto& e : a.history) {
    CHECK(e.train_top2 >= e.train_acc);
    CHECK(e.train_top3 >= e.train_top2);
    CHECK(e.val_top3 >= e.val_top2);
    CHECK(e.val_top2 >= e.val_acc);
    CHECK(e.train_loss >= 0.0);
    CHECK((e.val_acc >= 0.0 && e.val_acc <= 1.0));
  }
  CHECK(a.history.back().train_loss < a.history.front().train_loss);
  CHECK(evaluate(a.model, data).top1 == 1.0);
}

TEST_CASE("backbone stays frozen") {
  const LabeledBatch data = colour_set(32, 2);
  const ModelGraph before = small_model(2);
  TrainConfig cfg;
  cfg.epochs = 3;
  const TrainResult r = train_head(before, data, data, cfg);
  const auto trainable = before.trainable_weight_names();
  bool head_changed = false;
  for (const auto& name : before.weight_names()) {
    const bool is_head = std::find(trainable.begin(), trainable.end(), name) != trainable.end();
    if (is_head) {
      head_changed = head_changed || !(r.model.weight(name) == before.weight(name));
    } else {
      CHECK(r.model.weight(name) == before.weight(name));
    }
  }
  CHECK(head_changed);
}

TEST_CASE("epochs=0 leaves the model unchanged") {
  const LabeledBatch data = colour_set(32, 1);
  const ModelGraph m = small_model(3);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainResult r = train_head(m, data, data, cfg);
  CHECK(r.history.empty());
  for (const auto& name : m.weight_names()) CHECK(r.model.weight(name) == m.weight(name));
}

TEST_CASE("different seeds give different runs") {
  const FeatureSet f = extract_feature_set(small_model(4), colour_set(32, 3));
  TrainConfig a, b;
  a.epochs = b.epochs = 2;
  a.seed = 1;
  b.seed = 2;
  CHECK_FALSE(train_head(small_model(4), f, f, a).history == train_head(small_model(4), f, f, b).history);
}

TEST_CASE("partial final batch is used") {
  // 7 samples, batch 5: two steps per epoch. Compare against batch 7 (one step).
  const FeatureSet f = extract_feature_set(small_model(5), colour_set(32, 1));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.shuffle = false;
  cfg.batch_size = 5;
  const TrainResult two = train_head(small_model(5), f, f, cfg);
  cfg.batch_size = 7;
  const TrainResult one = train_head(small_model(5), f, f, cfg);
  // A dropped remainder would leave samples 5 and 6 unseen; instead both
  // runs touch every bias entry.
  const ModelGraph fresh = small_model(5);
  const Tensor& b0 = fresh.weight("dense/bias");
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(two.model.weight("dense/bias")[k] != b0[k]);
    CHECK(one.model.weight("dense/bias")[k] != b0[k]);
  }
  CHECK_FALSE(two.model.weight("dense/bias") == one.model.weight("dense/bias"));
}

TEST_CASE("training preconditions") {
  const LabeledBatch data = colour_set(32, 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  ModelConfig c;
  c.input_size = 32;
  c.width_multiplier = 0.25;
  Rng rng(1);
  const ModelGraph frozen = build_mobilenet(c, rng);
  CHECK_THROWS_AS(train_head(frozen, data, data, cfg), ValidationError);
  FeatureSet empty;
  empty.features = Tensor({1, 256}, 0.0f);
  const FeatureSet f = extract_feature_set(small_model(6), data);
  CHECK_THROWS_AS(train_head(small_model(6), f, empty, cfg), ValidationError);
  const LabeledBatch wrong = colour_set(64, 1);
  CHECK_THROWS(train_head(small_model(6), wrong, wrong, cfg));
}

TEST_CASE("evaluate") {
  SUBCASE("perfect predictions") {
    Tensor probs({3, 7}, 0.0f);
    std::vector<int> labels{0, 4, 6};
    for (std::size_t i = 0; i < 3; ++i) probs.at({i, std::size_t(labels[i])}) = 1.0f;
    const EvaluationResult r = evaluate_predictions(probs, labels);
    CHECK(r.top1 == 1.0);
    CHECK(r.report.accuracy == 1.0);
    CHECK(r.confusion.trace() == 3);
    CHECK(r.mean_loss == doctest::Approx(0.0));
  }
  SUBCASE("random predictor is near chance") {
    Rng rng(12);
    const std::size_t n = 7000;
    Tensor probs = softmax(oracle::random_tensor({n, 7}, rng, -2, 2));
    std::vector<int> labels(n);
    for (auto& l : labels) l = int(rng.below(7));
    const EvaluationResult r = evaluate_predictions(probs, labels);
    CHECK(std::abs(r.top1 - 1.0 / 7.0) < 0.02);
    CHECK(r.top2 >= r.top1);
    CHECK(r.top3 >= r.top2);
  }
  SUBCASE("fewer classes than three") {
    Tensor probs({2, 2}, std::vector<float>{0.9f, 0.1f, 0.2f, 0.8f});
    std::vector<int> labels{1, 1};
    const EvaluationResult r = evaluate_predictions(probs, labels);
    CHECK(r.top1 == 0.5);
    CHECK(r.top3 == 1.0);
  }
  SUBCASE("empty") {
    LabeledBatch none;
    CHECK_THROWS_AS(evaluate(small_model(1), none), ValidationError);
  }
}

TEST_CASE("history csv") {
  std::vector<EpochLog> h{{1, 0.5, 0.25, 0.5, 0.75, 0.6, 0.2, 0.4, 0.6}};
  const std::string csv = history_csv(h);
  CHECK(csv.rfind("epoch,train_loss,train_acc,train_top2,train_top3,val_loss,val_acc,val_top2,val_top3\n", 0) == 0);
  CHECK(csv.find("\n1,0.5,0.25,0.5,0.75,0.59999999999999998,0.20000000000000001,") != std::string::npos);
}

TEST_CASE("streaming feature extraction equals batched") {
  const ModelGraph m = small_model(7);
  const LabeledBatch data = colour_set(32, 2);
  const FeatureSet batched = extract_feature_set(m, data);
  const std::size_t per = 32 * 32 * 3;
  const FeatureSet streamed = extract_feature_set(
      m, data.labels.size(),
      [&](std::size_t i) {
        std::vector<float> v(data.images.data().begin() + long(i * per), data.images.data().begin() + long((i + 1) * per));
        return Tensor({1, 32, 32, 3}, std::move(v));
      },
      data.labels);
  CHECK(allclose(streamed.features, batched.features, 1e-6, 1e-7));
  CHECK(streamed.labels == batched.labels);
}
