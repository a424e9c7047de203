#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dermnet/tensor.hpp"

namespace dermnet {

/// K x K counts; entry (i, j) = samples of true class i predicted as j.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t k) : k_(k), counts_(k * k, 0) {}

  std::size_t classes() const noexcept { return k_; }
  std::int64_t at(std::size_t truth, std::size_t pred) const { return counts_.at(truth * k_ + pred); }
  std::int64_t& at(std::size_t truth, std::size_t pred) { return counts_.at(truth * k_ + pred); }

  std::int64_t row_sum(std::size_t truth) const;
  std::int64_t col_sum(std::size_t pred) const;
  std::int64_t trace() const;
  std::int64_t total() const;

  // One-vs-rest reduction for class c.
  std::int64_t tp(std::size_t c) const { return at(c, c); }
  std::int64_t fp(std::size_t c) const { return col_sum(c) - tp(c); }
  std::int64_t fn(std::size_t c) const { return row_sum(c) - tp(c); }
  std::int64_t tn(std::size_t c) const { return total() - tp(c) - fp(c) - fn(c); }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::int64_t> counts_;
};

/// Throws ValidationError on length mismatch or out-of-range labels.
ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  std::int64_t tp = 0, fp = 0, fn = 0;
  /// Set when a denominator was zero and the metric was defined as 0.
  bool zero_division = false;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Harmonic mean 2PR/(P+R); 0 when P+R is 0.
double f1_score(double precision, double recall);

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& m);

/// trace / total. Throws ValidationError on an empty matrix.
double categorical_accuracy(const ConfusionMatrix& m);

/// (TP + TN) / total for class c, one-vs-rest.
double per_class_binary_accuracy(const ConfusionMatrix& m, std::size_t c);

/// Pools TP/FP/FN over classes, then applies the formulas once.
Prf micro_average(const ConfusionMatrix& m);

/// Support-weighted mean. Throws ValidationError when supports sum to zero.
double weighted_average(std::span<const double> values, std::span<const std::int64_t> supports);

/// Weighted precision/recall/F1 from per-class counts. Each term is formed as
/// support*numerator/denominator so that weighted recall reduces to
/// trace/total exactly.
Prf weighted_average(std::span<const ClassMetrics> per_class);

/// Fraction of rows whose true class ranks among the k largest entries.
/// Ties rank the lower class index first.
double top_k_accuracy(const Tensor& probabilities, std::span<const int> truth, std::size_t k);

/// Row-wise argmax, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& probabilities);

struct ClassReport {
  std::vector<std::string> class_names;
  std::vector<ClassMetrics> per_class;
  Prf micro;
  Prf weighted;
  double accuracy = 0.0;
  std::int64_t total = 0;
  bool zero_division = false;
};

/// Class names default to the display names of the canonical labels when
/// the matrix is 7x7, otherwise "class i".
ClassReport build_report(const ConfusionMatrix& m, std::vector<std::string> class_names = {});

/// Rounds half-up to two decimals: 0.865 -> "0.87".
std::string format_2dp(double value);

/// Fixed-width table: one row per class, then Micro Average and Weighted
/// Average, then a footer with the categorical accuracy.
std::string format_report(const ClassReport& report);

/// Full-precision JSON document.
std::string report_to_json(const ClassReport& report);

/// CSV with a header row and first column of class codes.
std::string confusion_to_csv(const ConfusionMatrix& m, std::span<const std::string> codes);

}  // namespace dermnet
