#include "kinact/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "kinact/error.hpp"

namespace kinact::metrics {

namespace {

template <class A, class B>
void check_lengths(std::span<A> a, std::span<B> b) {
  if (a.size() != b.size())
    fail(ErrorCode::kShapeMismatch,
         fmt::format("prediction length {} != truth length {}", a.size(), b.size()));
  if (a.empty()) fail(ErrorCode::kEmptyInput, "no frames to score");
}

void check_class(int c, int classes) {
  if (c < 0 || c >= classes)
    fail(ErrorCode::kInvalidArgument, fmt::format("class {} outside [0, {})", c, classes));
}

}  // namespace

double accuracy(std::span<const int> pred, std::span<const int> truth) {
  check_lengths(pred, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double average_precision(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size())
    fail(ErrorCode::kShapeMismatch, "scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const auto positives = static_cast<std::size_t>(std::count(positive.begin(), positive.end(), true));
  if (positives == 0) return std::numeric_limits<double>::quiet_NaN();
  double area = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!positive[order[k]]) continue;
    ++hits;
    area += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return area / static_cast<double>(positives);
}

std::vector<double> per_class_ap(const RowMatrix& scores, std::span<const int> truth) {
  if (static_cast<std::size_t>(scores.rows()) != truth.size())
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} score rows for {} labels", scores.rows(), truth.size()));
  if (truth.empty()) fail(ErrorCode::kEmptyInput, "no frames to score");
  if (!scores.allFinite()) fail(ErrorCode::kInvalidArgument, "non-finite score");
  const int classes = static_cast<int>(scores.cols());
  for (int c : truth) check_class(c, classes);
  std::vector<double> out(static_cast<std::size_t>(classes));
  std::vector<double> column(truth.size());
  // std::vector<bool> is not contiguous.
  const auto positive = std::make_unique<bool[]>(truth.size());
  for (int c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      column[i] = scores(static_cast<Eigen::Index>(i), c);
      positive[i] = truth[i] == c;
    }
    out[static_cast<std::size_t>(c)] =
        average_precision(column, std::span<const bool>(positive.get(), truth.size()));
  }
  return out;
}

double mean_average_precision(const RowMatrix& scores, std::span<const int> truth) {
  const auto ap = per_class_ap(scores, truth);
  double total = 0.0;
  int counted = 0;
  for (double v : ap) {
    if (std::isnan(v)) continue;
    total += v;
    ++counted;
  }
  if (counted == 0) fail(ErrorCode::kEmptyInput, "no class has a positive frame");
  return total / counted;
}

std::vector<double> per_class_f1(std::span<const int> pred, std::span<const int> truth, int classes) {
  if (pred.size() != truth.size())
    fail(ErrorCode::kShapeMismatch,
         fmt::format("prediction length {} != truth length {}", pred.size(), truth.size()));
  if (classes < 1) fail(ErrorCode::kInvalidArgument, "need at least one class");
  const auto n = static_cast<std::size_t>(classes);
  std::vector<double> tp(n, 0.0), fp(n, 0.0), fn(n, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check_class(pred[i], classes);
    check_class(truth[i], classes);
    const auto p = static_cast<std::size_t>(pred[i]);
    const auto t = static_cast<std::size_t>(truth[i]);
    if (p == t) {
      tp[p] += 1.0;
    } else {
      fp[p] += 1.0;
      fn[t] += 1.0;
    }
  }
  std::vector<double> f1(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    const double precision = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double recall = tp[c] + fn[c] > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    if (precision + recall > 0.0) f1[c] = 2.0 * precision * recall / (precision + recall);
  }
  return f1;
}

double macro_f1(std::span<const int> pred, std::span<const int> truth, int classes) {
  const auto f1 = per_class_f1(pred, truth, classes);
  return std::accumulate(f1.begin(), f1.end(), 0.0) / static_cast<double>(f1.size());
}

double binary_accuracy(std::span<const LabelPair> pred, std::span<const LabelPair> truth) {
  check_lengths(pred, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    hits += static_cast<std::size_t>(pred[i].first == truth[i].first) +
            static_cast<std::size_t>(pred[i].second == truth[i].second);
  return static_cast<double>(hits) / static_cast<double>(2 * pred.size());
}

double combined_accuracy(std::span<const LabelPair> pred, std::span<const LabelPair> truth) {
  check_lengths(pred, truth);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double fps_benchmark(const std::function<void()>& op, int warmup, int trials) {
  if (trials < 10) fail(ErrorCode::kInvalidArgument, "fps benchmark needs at least 10 trials");
  if (warmup < 0) fail(ErrorCode::kInvalidArgument, "negative warmup count");
  using Clock = std::chrono::steady_clock;
  for (int i = 0; i < warmup; ++i) op();
  std::vector<double> rates;
  rates.reserve(static_cast<std::size_t>(trials));
  for (int i = 0; i < trials; ++i) {
    const auto start = Clock::now();
    op();
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    rates.push_back(1.0 / std::max(seconds, 1e-9));
  }
  const auto mid = rates.begin() + static_cast<std::ptrdiff_t>(rates.size() / 2);
  std::nth_element(rates.begin(), mid, rates.end());
  if (rates.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(rates.begin(), mid);
  return 0.5 * (lower + upper);
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json doc;
  doc["acc"] = acc;
  doc["acc_lower"] = acc_lower;
  doc["acc_upper"] = acc_upper;
  doc["mAP"] = mAP;
  doc["f1_macro"] = f1_macro;
  doc["binary_acc"] = binary_acc;
  doc["fps"] = fps;
  auto& classes = doc["per_class"];
  classes = nlohmann::json::array();
  for (const auto& [id, f] : f1) {
    nlohmann::json row{{"label", id}, {"name", std::string(label_name(id))}, {"f1", f}};
    const auto it = ap.find(id);
    row["ap"] = it == ap.end() ? nlohmann::json(nullptr) : nlohmann::json(it->second);
    classes.push_back(std::move(row));
  }
  auto& cats = doc["category_f1"];
  cats = nlohmann::json::object();
  for (const auto& [cat, v] : category_f1) cats[std::string(category_name(cat))] = v;
  return doc;
}

std::string EvalReport::per_class_csv() const {
  std::ostringstream out;
  out << "label,name,category,ap,f1\n";
  for (const auto& [id, f] : f1) {
    const auto it = ap.find(id);
    out << id << ',' << label_name(id) << ',' << category_name(label_category(id)) << ',';
    if (it != ap.end()) out << fmt::format("{:.6f}", it->second);
    out << ',' << fmt::format("{:.6f}", f) << '\n';
  }
  return out.str();
}

namespace {

std::vector<int> to_classes(const std::vector<int>& ids, int first, int classes) {
  std::vector<int> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i] = ids[i] - first;
    if (out[i] < 0 || out[i] >= classes)
      fail(ErrorCode::kInvalidArgument, fmt::format("label {} outside the head's range", ids[i]));
  }
  return out;
}

}  // namespace

EvalReport evaluate(const HeadOutput& lower, const HeadOutput& upper, double fps) {
  if (lower.truth.size() != upper.truth.size() || lower.pred.size() != upper.pred.size())
    fail(ErrorCode::kShapeMismatch, "heads cover different frame counts");
  EvalReport report;
  report.acc_lower = accuracy(lower.pred, lower.truth);
  report.acc_upper = accuracy(upper.pred, upper.truth);
  std::vector<LabelPair> pred(lower.pred.size()), truth(lower.truth.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    pred[i] = {lower.pred[i], upper.pred[i]};
    truth[i] = {lower.truth[i], upper.truth[i]};
  }
  report.acc = combined_accuracy(pred, truth);
  report.binary_acc = binary_accuracy(pred, truth);

  double ap_sum = 0.0, f1_sum = 0.0;
  int ap_count = 0, f1_count = 0;
  std::map<LabelCategory, std::pair<double, int>> cat;
  for (const HeadOutput* head : {&lower, &upper}) {
    const int classes = static_cast<int>(head->probs.cols());
    const auto t = to_classes(head->truth, head->first_label, classes);
    const auto p = to_classes(head->pred, head->first_label, classes);
    const auto ap = per_class_ap(head->probs, t);
    const auto f1 = per_class_f1(p, t, classes);
    for (int c = 0; c < classes; ++c) {
      const int id = head->first_label + c;
      const auto k = static_cast<std::size_t>(c);
      if (!std::isnan(ap[k])) {
        report.ap[id] = ap[k];
        ap_sum += ap[k];
        ++ap_count;
      }
      report.f1[id] = f1[k];
      f1_sum += f1[k];
      ++f1_count;
      auto& acc = cat[label_category(id)];
      acc.first += f1[k];
      ++acc.second;
    }
  }
  if (ap_count == 0) fail(ErrorCode::kEmptyInput, "no class has a positive frame");
  report.mAP = ap_sum / ap_count;
  report.f1_macro = f1_sum / f1_count;
  for (const auto& [c, v] : cat) report.category_f1[c] = v.first / v.second;
  report.fps = fps;
  return report;
}

}  // namespace kinact::metrics
