#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "kinact/error.hpp"
#include "kinact/metrics.hpp"
#include "metrics_oracle.hpp"

using namespace kinact;
using namespace kinact::metrics;
using kinact::testing::for_each_assignment;
using kinact::testing::Ratio;

namespace {

constexpr double kRationalTol = 1e-12;

RowMatrix to_matrix(const std::vector<std::vector<double>>& rows, std::size_t classes) {
  RowMatrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(classes));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < classes; ++c)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return m;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

}  // namespace

TEST_CASE("accuracy hand examples and errors") {
  const std::vector<int> a{1, 2, 3}, b{1, 2, 4}, c{4, 5, 6};
  CHECK(accuracy(a, a) == 1.0);
  CHECK(accuracy(a, b) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(accuracy(a, c) == 0.0);
  CHECK(code_of([&] { accuracy(a, std::vector<int>{1, 2}); }) == ErrorCode::kShapeMismatch);
  CHECK(code_of([&] { accuracy(std::vector<int>{}, std::vector<int>{}); }) == ErrorCode::kEmptyInput);
}

TEST_CASE("mAP hand examples") {
  SUBCASE("perfect scores") {
    const std::vector<int> truth{0, 1, 2, 1, 0};
    RowMatrix s = RowMatrix::Zero(5, 3);
    for (int i = 0; i < 5; ++i) s(i, truth[static_cast<std::size_t>(i)]) = 1.0;
    CHECK(mean_average_precision(s, truth) == 1.0);
  }
  SUBCASE("four frames, two classes") {
    // Class 0 scores rank frames 0,2,1,3; positives {0,1}: AP = (1 + 2/3) / 2.
    // Class 1 scores rank frames 3,1,2,0; positives {2,3}: AP = (1 + 2/3) / 2.
    const std::vector<int> truth{0, 0, 1, 1};
    RowMatrix s(4, 2);
    s << 0.9, 0.1, 0.4, 0.6, 0.7, 0.3, 0.2, 0.8;
    const double expected = 5.0 / 6.0;
    CHECK(per_class_ap(s, truth)[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(per_class_ap(s, truth)[1] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(mean_average_precision(s, truth) == doctest::Approx(expected).epsilon(1e-15));
  }
  SUBCASE("ties resolve by frame index") {
    const std::vector<double> score{0.5, 0.5, 0.5};
    const bool last[] = {false, false, true};
    const bool first[] = {true, false, false};
    CHECK(average_precision(score, last) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(average_precision(score, first) == 1.0);
  }
  SUBCASE("absent class excluded") {
    const std::vector<int> truth{0, 0, 1};
    RowMatrix s(3, 3);
    s << 1, 0, 0.5, 0.9, 0.1, 0.6, 0.2, 0.8, 0.7;
    const auto ap = per_class_ap(s, truth);
    CHECK(std::isnan(ap[2]));
    CHECK(mean_average_precision(s, truth) == doctest::Approx(0.5 * (ap[0] + ap[1])).epsilon(1e-15));
  }
  SUBCASE("errors") {
    RowMatrix s(0, 2);
    CHECK(code_of([&] { mean_average_precision(s, std::vector<int>{}); }) == ErrorCode::kEmptyInput);
    RowMatrix t(2, 2);
    t << 1, 0, 0, 1;
    CHECK(code_of([&] { mean_average_precision(t, std::vector<int>{0, 2}); }) ==
          ErrorCode::kInvalidArgument);
    t(0, 0) = std::nan("");
    CHECK(code_of([&] { mean_average_precision(t, std::vector<int>{0, 1}); }) ==
          ErrorCode::kInvalidArgument);
    CHECK(code_of([&] { mean_average_precision(t, std::vector<int>{0}); }) == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("macro F1 hand examples") {
  const std::vector<int> truth{0, 1, 0, 1};
  CHECK(macro_f1(truth, truth, 2) == 1.0);
  // Class 0: TP 1, FP 1, FN 1; class 1 mirrored.
  CHECK(macro_f1(std::vector<int>{0, 0, 1, 1}, truth, 2) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(macro_f1(std::vector<int>{0, 0, 0, 0}, truth, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  const auto f1 = per_class_f1(std::vector<int>{0, 0}, std::vector<int>{0, 0}, 3);
  CHECK(f1 == std::vector<double>{1.0, 0.0, 0.0});
  CHECK(code_of([&] { macro_f1(std::vector<int>{3}, std::vector<int>{0}, 3); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("binary accuracy hand examples") {
  const std::vector<LabelPair> truth{{1, 8}, {2, 9}, {3, 10}};
  CHECK(binary_accuracy(truth, truth) == 1.0);
  const std::vector<LabelPair> upper_wrong{{1, 9}, {2, 10}, {3, 8}};
  CHECK(binary_accuracy(upper_wrong, truth) == 0.5);
  CHECK(combined_accuracy(upper_wrong, truth) == 0.0);
  const std::vector<LabelPair> four_of_six{{1, 8}, {4, 9}, {3, 11}};
  CHECK(binary_accuracy(four_of_six, truth) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(combined_accuracy(four_of_six, truth) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(code_of([&] { binary_accuracy(std::vector<LabelPair>{{1, 8}}, truth); }) ==
        ErrorCode::kShapeMismatch);
}

TEST_CASE("accuracy, F1 and binary accuracy match the oracles on every small instance") {
  std::size_t instances = 0;
  for (std::size_t n = 1; n <= 5; ++n) {
    for (int classes = 1; classes <= 3; ++classes) {
      for_each_assignment(n, classes, [&](const std::vector<int>& pred) {
        for_each_assignment(n, classes, [&](const std::vector<int>& truth) {
          ++instances;
          REQUIRE(accuracy(pred, truth) == kinact::testing::oracle_accuracy(pred, truth).value());
          REQUIRE(std::abs(macro_f1(pred, truth, classes) -
                           kinact::testing::oracle_macro_f1(pred, truth, classes).value()) <= kRationalTol);
        });
      });
    }
  }
  CHECK(instances > 60000);

  // Binary accuracy over pairs: lower and upper slots each from 2 labels.
  for (std::size_t n = 1; n <= 3; ++n) {
    for_each_assignment(4 * n, 2, [&](const std::vector<int>& v) {
      std::vector<int> pl(v.begin(), v.begin() + n), pu(v.begin() + n, v.begin() + 2 * n);
      std::vector<int> tl(v.begin() + 2 * n, v.begin() + 3 * n), tu(v.begin() + 3 * n, v.end());
      std::vector<LabelPair> p(n), t(n);
      for (std::size_t i = 0; i < n; ++i) {
        p[i] = {pl[i], pu[i]};
        t[i] = {tl[i], tu[i]};
      }
      REQUIRE(binary_accuracy(p, t) == kinact::testing::oracle_binary(pl, pu, tl, tu).value());
    });
  }
}

TEST_CASE("mAP matches the threshold-enumeration oracle") {
  // Exhaustive over truth and a tie-heavy score grid for small instances.
  for (std::size_t n = 1; n <= 3; ++n) {
    for_each_assignment(n, 2, [&](const std::vector<int>& truth) {
      for_each_assignment(2 * n, 3, [&](const std::vector<int>& grid) {
        std::vector<std::vector<double>> rows(n, std::vector<double>(2));
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < 2; ++c) rows[i][c] = 0.5 * grid[2 * i + c];
        const auto s = to_matrix(rows, 2);
        REQUIRE(std::abs(mean_average_precision(s, truth) -
                         kinact::testing::oracle_map(rows, truth, 2).value()) <= kRationalTol);
      });
    });
  }
  // Every truth assignment with N = 6, C = 3 under random tied scores.
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> level(0, 3);
  for_each_assignment(6, 3, [&](const std::vector<int>& truth) {
    std::vector<std::vector<double>> rows(6, std::vector<double>(3));
    for (auto& r : rows)
      for (auto& x : r) x = 0.25 * level(rng);
    REQUIRE(std::abs(mean_average_precision(to_matrix(rows, 3), truth) -
                     kinact::testing::oracle_map(rows, truth, 3).value()) <= kRationalTol);
  });
}

TEST_CASE("binary accuracy is the mean of the per-head accuracies") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 40;
    std::uniform_int_distribution<int> lo(1, 7), up(8, 17);
    std::vector<int> pl(n), pu(n), tl(n), tu(n);
    std::vector<LabelPair> p(n), t(n);
    for (std::size_t i = 0; i < n; ++i) {
      pl[i] = lo(rng);
      tl[i] = lo(rng);
      pu[i] = up(rng);
      tu[i] = up(rng);
      p[i] = {pl[i], pu[i]};
      t[i] = {tl[i], tu[i]};
    }
    CHECK(binary_accuracy(p, t) ==
          doctest::Approx(0.5 * (accuracy(pl, tl) + accuracy(pu, tu))).epsilon(1e-15));
  }
}

TEST_CASE("metrics are invariant under a consistent relabeling") {
  std::mt19937_64 rng(3);
  const int classes = 5;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 30;
    std::uniform_int_distribution<int> label(0, classes - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<int> pred(n), truth(n);
    RowMatrix s(static_cast<Eigen::Index>(n), classes);
    for (std::size_t i = 0; i < n; ++i) {
      pred[i] = label(rng);
      truth[i] = label(rng);
      for (int c = 0; c < classes; ++c) s(static_cast<Eigen::Index>(i), c) = std::round(4 * u(rng)) / 4;
    }
    std::vector<int> perm(classes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pred2(n), truth2(n);
    RowMatrix s2(static_cast<Eigen::Index>(n), classes);
    for (std::size_t i = 0; i < n; ++i) {
      pred2[i] = perm[static_cast<std::size_t>(pred[i])];
      truth2[i] = perm[static_cast<std::size_t>(truth[i])];
      for (int c = 0; c < classes; ++c) s2(static_cast<Eigen::Index>(i), perm[static_cast<std::size_t>(c)]) = s(static_cast<Eigen::Index>(i), c);
    }
    CHECK(accuracy(pred, truth) == accuracy(pred2, truth2));
    CHECK(macro_f1(pred, truth, classes) == doctest::Approx(macro_f1(pred2, truth2, classes)).epsilon(1e-14));
    CHECK(mean_average_precision(s, truth) ==
          doctest::Approx(mean_average_precision(s2, truth2)).epsilon(1e-14));
  }
}

TEST_CASE("fps benchmark") {
  CHECK(code_of([] { fps_benchmark([] {}, 0, 9); }) == ErrorCode::kInvalidArgument);
  const double sleepy =
      fps_benchmark([] { std::this_thread::sleep_for(std::chrono::milliseconds(10)); }, 2, 10);
  CHECK(sleepy == doctest::Approx(100.0).epsilon(0.2));

  volatile double sink = 0.0;
  const auto work = [&] {
    double acc = 0.0;
    for (int i = 1; i < 200000; ++i) acc += std::sqrt(static_cast<double>(i));
    sink = acc;
  };
  const double a = fps_benchmark(work, 5, 31);
  const double b = fps_benchmark(work, 5, 31);
  CHECK(a > 0.0);
  CHECK(std::abs(a - b) <= 0.3 * std::max(a, b));
}

TEST_CASE("evaluation report") {
  std::mt19937_64 rng(5);
  const std::size_t n = 120;
  HeadOutput lower{{}, {}, RowMatrix(n, 7), 1};
  HeadOutput upper{{}, {}, RowMatrix(n, 10), 8};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int tl = 1 + static_cast<int>(i % 6);  // label 7 never occurs
    const int tu = 8 + static_cast<int>(i % 10);
    lower.truth.push_back(tl);
    upper.truth.push_back(tu);
    lower.pred.push_back(u(rng) < 0.8 ? tl : 1);
    upper.pred.push_back(u(rng) < 0.6 ? tu : 17);
    for (int c = 0; c < 7; ++c) lower.probs(static_cast<Eigen::Index>(i), c) = u(rng) + (c + 1 == tl ? 0.5 : 0.0);
    for (int c = 0; c < 10; ++c) upper.probs(static_cast<Eigen::Index>(i), c) = u(rng) + (c + 8 == tu ? 0.3 : 0.0);
  }
  const auto report = evaluate(lower, upper, 250.0);

  CHECK(report.acc_lower == accuracy(lower.pred, lower.truth));
  CHECK(report.acc_upper == accuracy(upper.pred, upper.truth));
  CHECK(report.binary_acc == doctest::Approx(0.5 * (report.acc_lower + report.acc_upper)).epsilon(1e-15));
  CHECK(report.acc <= std::min(report.acc_lower, report.acc_upper));
  CHECK(report.ap.size() == 16);
  CHECK(report.ap.count(7) == 0);
  CHECK(report.f1.size() == 17);
  CHECK(report.f1.at(7) == 0.0);
  for (double v : {report.acc, report.mAP, report.f1_macro, report.binary_acc}) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  double f1_sum = 0.0;
  for (const auto& [id, f] : report.f1) f1_sum += f;
  CHECK(report.f1_macro == doctest::Approx(f1_sum / 17.0).epsilon(1e-15));
  CHECK(report.category_f1.size() == 4);
  CHECK(report.category_f1.at(LabelCategory::kBackground) == report.f1.at(17));
  CHECK(report.category_f1.at(LabelCategory::kMotion) ==
        doctest::Approx((report.f1.at(1) + report.f1.at(2) + report.f1.at(3) + report.f1.at(4)) / 4.0)
            .epsilon(1e-15));

  const auto doc = report.to_json();
  CHECK(doc.at("fps").get<double>() == 250.0);
  CHECK(doc.at("per_class").size() == 17);
  CHECK(doc.at("per_class")[6].at("ap").is_null());
  CHECK(doc.at("category_f1").size() == 4);
  const auto csv = report.per_class_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 18);

  HeadOutput bad = lower;
  bad.pred.pop_back();
  CHECK(code_of([&] { evaluate(bad, upper, 1.0); }) == ErrorCode::kShapeMismatch);
}
