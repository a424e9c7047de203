#include "dermnet/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "dermnet/errors.hpp"
#include "dermnet/labels.hpp"

namespace dermnet {

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < k_; ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t pred) const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, pred);
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < k_; ++i) s += at(i, i);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, std::size_t k) {
  if (truth.size() != predicted.size()) throw ValidationError("label lists differ in length");
  if (k == 0) throw ValidationError("class count must be positive");
  ConfusionMatrix m(k);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || static_cast<std::size_t>(t) >= k || static_cast<std::size_t>(p) >= k) {
      throw ValidationError("label out of range at position " + std::to_string(i));
    }
    ++m.at(static_cast<std::size_t>(t), static_cast<std::size_t>(p));
  }
  return m;
}

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * (precision * recall / denom) : 0.0;
}

namespace {

double ratio(std::int64_t num, std::int64_t den, bool& undefined) {
  if (den == 0) {
    undefined = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<ClassMetrics> per_class_prf(const ConfusionMatrix& m) {
  std::vector<ClassMetrics> out(m.classes());
  for (std::size_t c = 0; c < m.classes(); ++c) {
    auto& r = out[c];
    r.tp = m.tp(c);
    r.fp = m.fp(c);
    r.fn = m.fn(c);
    r.support = m.row_sum(c);
    r.precision = ratio(r.tp, r.tp + r.fp, r.zero_division);
    r.recall = ratio(r.tp, r.tp + r.fn, r.zero_division);
    // 2TP/(2TP+FP+FN) is the harmonic mean of the two ratios above.
    r.f1 = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, r.zero_division);
  }
  return out;
}

double categorical_accuracy(const ConfusionMatrix& m) {
  const auto total = m.total();
  if (total == 0) throw ValidationError("accuracy of an empty confusion matrix");
  return static_cast<double>(m.trace()) / static_cast<double>(total);
}

double per_class_binary_accuracy(const ConfusionMatrix& m, std::size_t c) {
  const auto total = m.total();
  if (total == 0) throw ValidationError("accuracy of an empty confusion matrix");
  if (c >= m.classes()) throw ValidationError("class index out of range");
  return static_cast<double>(m.tp(c) + m.tn(c)) / static_cast<double>(total);
}

Prf micro_average(const ConfusionMatrix& m) {
  if (m.total() == 0) throw ValidationError("micro average of an empty confusion matrix");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t c = 0; c < m.classes(); ++c) {
    tp += m.tp(c);
    fp += m.fp(c);
    fn += m.fn(c);
  }
  bool unused = false;
  return {ratio(tp, tp + fp, unused), ratio(tp, tp + fn, unused), ratio(2 * tp, 2 * tp + fp + fn, unused)};
}

double weighted_average(std::span<const double> values, std::span<const std::int64_t> supports) {
  if (values.size() != supports.size()) throw ValidationError("values and supports differ in length");
  double num = 0.0;
  std::int64_t den = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (supports[i] < 0) throw ValidationError("supports must be non-negative");
    num += static_cast<double>(supports[i]) * values[i];
    den += supports[i];
  }
  if (den == 0) throw ValidationError("weighted average needs a nonzero total support");
  return num / static_cast<double>(den);
}

Prf weighted_average(std::span<const ClassMetrics> per_class) {
  double p = 0.0, r = 0.0, f = 0.0;
  std::int64_t total = 0;
  auto term = [](std::int64_t support, std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(support * num) / static_cast<double>(den);
  };
  for (const auto& c : per_class) {
    p += term(c.support, c.tp, c.tp + c.fp);
    r += term(c.support, c.tp, c.tp + c.fn);
    f += term(c.support, 2 * c.tp, 2 * c.tp + c.fp + c.fn);
    total += c.support;
  }
  if (total == 0) throw ValidationError("weighted average needs a nonzero total support");
  const auto n = static_cast<double>(total);
  return {p / n, r / n, f / n};
}

double top_k_accuracy(const Tensor& probabilities, std::span<const int> truth, std::size_t k) {
  if (probabilities.rank() != 2) throw ShapeError("probabilities must be (N,K)");
  const std::size_t n = probabilities.dim(0), classes = probabilities.dim(1);
  if (k < 1 || k > classes) throw ValidationError("k must lie in [1, " + std::to_string(classes) + "]");
  if (truth.size() != n) throw ValidationError("label count does not match probability rows");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const int t = truth[r];
    if (t < 0 || static_cast<std::size_t>(t) >= classes) throw ValidationError("label out of range");
    const float* row = probabilities.data().data() + r * classes;
    const float pt = row[t];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      if (row[j] > pt || (row[j] == pt && j < static_cast<std::size_t>(t))) ++rank;
    }
    if (rank < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<int> argmax_rows(const Tensor& probabilities) {
  if (probabilities.rank() != 2) throw ShapeError("probabilities must be (N,K)");
  const std::size_t n = probabilities.dim(0), classes = probabilities.dim(1);
  std::vector<int> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    const float* row = probabilities.data().data() + r * classes;
    std::size_t best = 0;
    for (std::size_t j = 1; j < classes; ++j) {
      if (row[j] > row[best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

ClassReport build_report(const ConfusionMatrix& m, std::vector<std::string> class_names) {
  ClassReport report;
  if (class_names.empty()) {
    for (std::size_t c = 0; c < m.classes(); ++c) {
      class_names.push_back(m.classes() == kNumClasses ? std::string(kClassLabels[c].name) : "class " + std::to_string(c));
    }
  }
  if (class_names.size() != m.classes()) throw ValidationError("class name count does not match the matrix");
  report.class_names = std::move(class_names);
  report.per_class = per_class_prf(m);
  report.micro = micro_average(m);
  report.weighted = weighted_average(std::span<const ClassMetrics>(report.per_class));
  report.accuracy = categorical_accuracy(m);
  report.total = m.total();
  for (const auto& c : report.per_class) report.zero_division = report.zero_division || c.zero_division;
  return report;
}

std::string format_2dp(double value) {
  // The epsilon absorbs binary representation error so decimal ties round up.
  const auto cents = static_cast<long long>(std::floor(value * 100.0 + 0.5 + 1e-9));
  std::ostringstream os;
  if (cents < 0) os << '-';
  const long long a = cents < 0 ? -cents : cents;
  os << a / 100 << '.' << std::setw(2) << std::setfill('0') << a % 100;
  return os.str();
}

std::string format_report(const ClassReport& report) {
  std::size_t name_w = std::string_view("Weighted Average").size();
  for (const auto& n : report.class_names) name_w = std::max(name_w, n.size());
  name_w += 2;

  std::ostringstream os;
  auto row = [&](const std::string& name, const Prf& v, std::int64_t support) {
    os << std::left << std::setw(static_cast<int>(name_w)) << name << std::right << std::setw(10)
       << format_2dp(v.precision) << std::setw(10) << format_2dp(v.recall) << std::setw(10) << format_2dp(v.f1)
       << std::setw(10) << support << '\n';
  };
  os << std::left << std::setw(static_cast<int>(name_w)) << "Classes" << std::right << std::setw(10) << "Precision"
     << std::setw(10) << "Recall" << std::setw(10) << "F1-Score" << std::setw(10) << "Support" << '\n';
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    row(report.class_names[c], {m.precision, m.recall, m.f1}, m.support);
  }
  row("Micro Average", report.micro, report.total);
  row("Weighted Average", report.weighted, report.total);
  os << '\n' << "Categorical accuracy: " << format_2dp(report.accuracy) << '\n';
  if (report.zero_division) os << "Note: some metrics had a zero denominator and were set to 0.\n";
  return os.str();
}

std::string report_to_json(const ClassReport& report) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    nlohmann::ordered_json entry;
    if (report.per_class.size() == kNumClasses) entry["code"] = kClassLabels[c].code;
    entry["name"] = report.class_names[c];
    entry["precision"] = m.precision;
    entry["recall"] = m.recall;
    entry["f1"] = m.f1;
    entry["support"] = m.support;
    entry["zero_division"] = m.zero_division;
    classes.push_back(std::move(entry));
  }
  j["classes"] = std::move(classes);
  j["micro_average"] = {{"precision", report.micro.precision}, {"recall", report.micro.recall}, {"f1", report.micro.f1}};
  j["weighted_average"] = {
      {"precision", report.weighted.precision}, {"recall", report.weighted.recall}, {"f1", report.weighted.f1}};
  j["accuracy"] = report.accuracy;
  j["total"] = report.total;
  return j.dump(2);
}

std::string confusion_to_csv(const ConfusionMatrix& m, std::span<const std::string> codes) {
  if (codes.size() != m.classes()) throw ValidationError("class code count does not match the matrix");
  std::ostringstream os;
  os << "true\\predicted";
  for (const auto& c : codes) os << ',' << c;
  os << '\n';
  for (std::size_t i = 0; i < m.classes(); ++i) {
    os << codes[i];
    for (std::size_t j = 0; j < m.classes(); ++j) os << ',' << m.at(i, j);
    os << '\n';
  }
  return os.str();
}

}  // namespace dermnet
