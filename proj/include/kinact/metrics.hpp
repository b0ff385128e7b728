#pragma once

// Frame-level classification metrics and throughput measurement.

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kinact/labels.hpp"

namespace kinact::metrics {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// (lower, upper) label ids of one frame.
using LabelPair = std::pair<int, int>;

/// Fraction of equal entries. Throws kShapeMismatch or kEmptyInput.
double accuracy(std::span<const int> pred, std::span<const int> truth);

/// Step-wise area under the precision-recall curve for one ranking.
/// Frames are sorted by descending score, equal scores by ascending index.
/// Returns NaN when there are no positives.
double average_precision(std::span<const double> scores, std::span<const bool> positive);

/// AP of every column of scores (N x C) against class indices; NaN marks
/// classes without positives.
std::vector<double> per_class_ap(const RowMatrix& scores, std::span<const int> truth);

/// Mean AP over classes that have positives. Throws kEmptyInput when N = 0 or
/// no class has a positive, kInvalidArgument on a bad class index or
/// non-finite score, kShapeMismatch on a row count mismatch.
double mean_average_precision(const RowMatrix& scores, std::span<const int> truth);

/// Per-class F1 over classes 0..C-1; classes with P + R = 0 give 0.
std::vector<double> per_class_f1(std::span<const int> pred, std::span<const int> truth, int classes);
double macro_f1(std::span<const int> pred, std::span<const int> truth, int classes);

/// Slot match rate over both heads.
double binary_accuracy(std::span<const LabelPair> pred, std::span<const LabelPair> truth);
/// Frames with both slots correct.
double combined_accuracy(std::span<const LabelPair> pred, std::span<const LabelPair> truth);

/// Median of 1 / latency over `trials` timed calls after `warmup` untimed
/// ones. Throws kInvalidArgument when trials < 10.
double fps_benchmark(const std::function<void()>& op, int warmup, int trials);

struct EvalReport {
  double acc = 0.0;  // both slots correct
  double acc_lower = 0.0;
  double acc_upper = 0.0;
  double mAP = 0.0;
  double f1_macro = 0.0;
  double binary_acc = 0.0;
  std::map<int, double> ap;  // label id -> AP (classes with positives only)
  std::map<int, double> f1;  // label id -> F1
  std::map<LabelCategory, double> category_f1;
  double fps = 0.0;

  nlohmann::json to_json() const;
  /// One row per label id: label,name,category,ap,f1.
  std::string per_class_csv() const;
};

/// Per-head inputs of an evaluation run over the same frames.
struct HeadOutput {
  std::vector<int> pred;   // label ids
  std::vector<int> truth;  // label ids
  RowMatrix probs;         // N x classes, column k is label first_label + k
  int first_label = 0;
};

/// mAP and macro F1 pool the per-class values of both heads (17 labels);
/// category F1 averages per-class F1 within each category.
EvalReport evaluate(const HeadOutput& lower, const HeadOutput& upper, double fps);

}  // namespace kinact::metrics
