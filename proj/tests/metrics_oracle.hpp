#pragma once

// Brute-force reference implementations of the classification metrics,
// written from counting definitions with integer arithmetic where possible.

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace kinact::testing {

/// Exact rational p / q.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Ratio() = default;
  Ratio(std::int64_t n, std::int64_t d) : num(n), den(d) { normalize(); }

  void normalize() {
    const std::int64_t g = std::gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  Ratio operator+(const Ratio& o) const { return Ratio(num * o.den + o.num * den, den * o.den); }
  Ratio operator*(const Ratio& o) const { return Ratio(num * o.num, den * o.den); }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline Ratio oracle_accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::int64_t same = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == truth[i]) ++same;
  return {same, static_cast<std::int64_t>(pred.size())};
}

/// F1 of one class as 2 TP / (2 TP + FP + FN), 0 when the denominator is 0.
inline Ratio oracle_f1(const std::vector<int>& pred, const std::vector<int>& truth, int c) {
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == c && truth[i] == c) ++tp;
    if (pred[i] == c && truth[i] != c) ++fp;
    if (pred[i] != c && truth[i] == c) ++fn;
  }
  if (2 * tp + fp + fn == 0) return {0, 1};
  return {2 * tp, 2 * tp + fp + fn};
}

inline Ratio oracle_macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  Ratio total;
  for (int c = 0; c < classes; ++c) total = total + oracle_f1(pred, truth, c);
  return total * Ratio(1, classes);
}

/// Rank position of every frame: strictly higher scores first, then lower index.
inline std::vector<std::size_t> oracle_ranks(const std::vector<double>& score) {
  std::vector<std::size_t> rank(score.size(), 0);
  for (std::size_t i = 0; i < score.size(); ++i)
    for (std::size_t j = 0; j < score.size(); ++j)
      if (score[j] > score[i] || (score[j] == score[i] && j < i)) ++rank[i];
  return rank;
}

/// Sum over every cut-off k of (recall_k - recall_{k-1}) * precision_k, each
/// count recomputed from scratch. Returns den = 0 when there are no positives.
inline Ratio oracle_ap(const std::vector<double>& score, const std::vector<bool>& positive) {
  const auto rank = oracle_ranks(score);
  std::int64_t positives = 0;
  for (bool p : positive) positives += p ? 1 : 0;
  if (positives == 0) return {0, 0};
  Ratio area;
  std::int64_t previous_hits = 0;
  for (std::size_t k = 1; k <= score.size(); ++k) {
    std::int64_t hits = 0;
    for (std::size_t i = 0; i < score.size(); ++i)
      if (rank[i] < k && positive[i]) ++hits;
    const Ratio precision(hits, static_cast<std::int64_t>(k));
    const Ratio recall_step(hits - previous_hits, positives);
    area = area + precision * recall_step;
    previous_hits = hits;
  }
  return area;
}

/// scores[i][c]; classes without positives skipped.
inline Ratio oracle_map(const std::vector<std::vector<double>>& scores, const std::vector<int>& truth,
                        int classes) {
  Ratio total;
  std::int64_t counted = 0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> column(truth.size());
    std::vector<bool> positive(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      column[i] = scores[i][static_cast<std::size_t>(c)];
      positive[i] = truth[i] == c;
    }
    const Ratio ap = oracle_ap(column, positive);
    if (ap.den == 0) continue;
    total = total + ap;
    ++counted;
  }
  return total * Ratio(1, counted);
}

/// Slot matches over 2 N slots.
inline Ratio oracle_binary(const std::vector<int>& pl, const std::vector<int>& pu,
                           const std::vector<int>& tl, const std::vector<int>& tu) {
  std::int64_t same = 0;
  for (std::size_t i = 0; i < pl.size(); ++i) {
    if (pl[i] == tl[i]) ++same;
    if (pu[i] == tu[i]) ++same;
  }
  return {same, 2 * static_cast<std::int64_t>(pl.size())};
}

/// Calls f(v) for every vector of length n with entries in [0, base).
template <class F>
void for_each_assignment(std::size_t n, int base, F&& f) {
  std::vector<int> v(n, 0);
  while (true) {
    f(v);
    std::size_t i = 0;
    while (i < n && ++v[i] == base) v[i++] = 0;
    if (i == n) return;
  }
}

}  // namespace kinact::testing
