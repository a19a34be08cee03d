#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "mepoi/metrics.hpp"
#include "mepoi/rng.hpp"
#include "test_util.hpp"

using namespace mepoi;
using namespace mepoi::testutil;

TEST_SUITE_BEGIN("metrics");

namespace {

// Literal probability-of-correct-ranking: every (positive, negative) pair
// counted once, ties worth a half.
double auroc_pairwise(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j])
        wins += 1.0;
      else if (s[i] == s[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Recomputes precision/recall from scratch at every distinct threshold.
double auprc_sweep(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> ts = s;
  std::sort(ts.begin(), ts.end(), std::greater<>());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
  std::size_t total_pos = 0;
  for (int v : y) total_pos += static_cast<std::size_t>(v);
  double area = 0.0, prev_recall = 0.0;
  for (double t : ts) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] < t) continue;
      if (y[i] == 1)
        ++tp;
      else
        ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

// Random scores quantized onto a coarse grid so ties actually occur.
void random_instance(Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& y) {
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = std::floor(rng.uniform() * 8.0) / 8.0;
    y[i] = rng.bernoulli(0.3) ? 1 : 0;
  }
}

}  // namespace

TEST_CASE("auroc closed forms") {
  CHECK(*auroc({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0}) == 1.0);
  CHECK(*auroc({0.9, 0.8, 0.7, 0.85}, {1, 1, 0, 0}) == 0.75);
  CHECK(*auroc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
  CHECK(!auroc({0.1, 0.9}, {1, 1}).has_value());
  CHECK(!auroc({0.1, 0.9}, {0, 0}).has_value());
  CHECK_THROWS(auroc({0.1}, {2}));
}

TEST_CASE("auroc matches the exhaustive pairwise count") {
  Rng rng(101);
  std::vector<double> s;
  std::vector<int> y;
  int checked = 0;
  for (int it = 0; it < 200; ++it) {
    random_instance(rng, 30, s, y);
    const auto fast = auroc(s, y);
    if (!fast) continue;  // single-class draw
    ++checked;
    CHECK(std::abs(*fast - auroc_pairwise(s, y)) < 1e-12);
  }
  CHECK(checked > 150);
}

TEST_CASE("auroc is symmetric under label flips") {
  Rng rng(103);
  std::vector<double> s;
  std::vector<int> y;
  for (int it = 0; it < 50; ++it) {
    random_instance(rng, 25, s, y);
    const auto a = auroc(s, y);
    if (!a) continue;
    std::vector<double> neg(s.size());
    std::vector<int> flip(y.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      neg[i] = -s[i];
      flip[i] = 1 - y[i];
    }
    CHECK(std::abs(*a - *auroc(neg, flip)) < 1e-12);
  }
}

TEST_CASE("auprc closed forms") {
  // All positives ranked first.
  CHECK(*auprc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  // Single positive dead last among five: one step of recall at precision 1/5.
  CHECK(std::abs(*auprc({0.9, 0.8, 0.7, 0.6, 0.5}, {0, 0, 0, 0, 1}) - 0.2) < 1e-12);
  CHECK(!auprc({0.5, 0.6}, {0, 0}).has_value());
}

TEST_CASE("auprc matches a from-scratch threshold sweep") {
  Rng rng(107);
  std::vector<double> s;
  std::vector<int> y;
  int checked = 0;
  for (int it = 0; it < 200; ++it) {
    random_instance(rng, 24, s, y);
    const auto fast = auprc(s, y);
    if (!fast) continue;
    ++checked;
    CHECK(std::abs(*fast - auprc_sweep(s, y)) < 1e-12);
  }
  CHECK(checked > 150);
}

TEST_CASE("binary f1 counts the positive class") {
  // tp=2 (0.9, 0.8), fp=1 (0.7), fn=1 (0.4): f1 = 4/6.
  CHECK(std::abs(*binary_f1({0.9, 0.8, 0.7, 0.4, 0.1}, {1, 1, 0, 1, 0}) - 2.0 / 3.0) < 1e-12);
  CHECK(*binary_f1({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(!binary_f1({0.1, 0.2}, {0, 0}).has_value());  // nothing positive anywhere
}

TEST_CASE("macro f1 over bins skips undefined columns") {
  // Column 0: perfect. Column 1: all-negative and never predicted, skipped.
  // Column 2: tp=1, fp=1, fn=1 -> f1 = 0.5.
  Tensor<double> probs = Tensor<double>::from({3, 3}, {0.9, 0.1, 0.9,   //
                                                       0.1, 0.2, 0.8,   //
                                                       0.8, 0.3, 0.1});
  Tensor<double> labels = Tensor<double>::from({3, 3}, {1, 0, 1,   //
                                                        0, 0, 0,   //
                                                        1, 0, 1});
  CHECK(std::abs(*macro_f1_bins(probs, labels) - 0.75) < 1e-12);

  Tensor<double> dead = Tensor<double>::zeros({3, 2});
  CHECK(!macro_f1_bins(dead, dead).has_value());

  // Perfect predictions give exactly 1.
  CHECK(*macro_f1_bins(labels, labels) == 1.0);
}

TEST_CASE("macro f1 over classes matches the hand-built confusion matrix") {
  const std::vector<int> label = {0, 0, 0, 1, 1, 2, 2, 2, 2, 0};
  const std::vector<int> pred = {0, 1, 0, 1, 2, 2, 2, 0, 1, 0};
  // Class 0: tp=3 fp=1 fn=1 -> 0.75. Class 1: tp=1 fp=2 fn=1 -> 0.4.
  // Class 2: tp=2 fp=1 fn=2 -> 4/7.
  const double expect = (0.75 + 0.4 + 4.0 / 7.0) / 3.0;
  CHECK(std::abs(*macro_f1_classes(pred, label, 3) - expect) < 1e-12);

  // A class absent from labels and predictions drops out of the average.
  CHECK(std::abs(*macro_f1_classes(pred, label, 4) - expect) < 1e-12);

  CHECK(*macro_f1_classes(label, label, 3) == 1.0);
  CHECK_THROWS(macro_f1_classes({0, 5}, {0, 1}, 3));
}

TEST_CASE("one-vs-rest auprc averages the per-class curves") {
  Rng rng(109);
  const i64 n = 40, classes = 3;
  Tensor<double> scores = Tensor<double>::zeros({n, classes});
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (i64 r = 0; r < n; ++r) {
    labels[static_cast<std::size_t>(r)] = static_cast<int>(rng.uniform_int(0, 2));
    for (i64 c = 0; c < classes; ++c) scores.at(r, c) = std::floor(rng.uniform() * 8.0) / 8.0;
  }
  double expect = 0.0;
  for (int c = 0; c < classes; ++c) {
    std::vector<double> col(static_cast<std::size_t>(n));
    std::vector<int> lab(static_cast<std::size_t>(n));
    for (i64 r = 0; r < n; ++r) {
      col[static_cast<std::size_t>(r)] = scores.at(r, c);
      lab[static_cast<std::size_t>(r)] = labels[static_cast<std::size_t>(r)] == c ? 1 : 0;
    }
    expect += auprc_sweep(col, lab);
  }
  expect /= 3.0;
  CHECK(std::abs(*macro_auprc_ovr(scores, labels) - expect) < 1e-12);
}

TEST_CASE("regression and agreement metrics hit their closed forms") {
  Rng rng(113);
  const Tensor<double> truth = rand_tensor({6, 8}, rng);
  CHECK(mae(truth, truth) == 0.0);
  CHECK(std::abs(mean_cosine_rows(truth, truth) - 1.0) < 1e-12);

  Tensor<double> shifted = truth.clone();
  for (i64 i = 0; i < shifted.size(); ++i) shifted.data()[i] += 0.1;
  CHECK(std::abs(mae(shifted, truth) - 0.1) < 1e-12);

  const Tensor<double> a = Tensor<double>::from({1, 2}, {1.0, 0.0});
  const Tensor<double> b = Tensor<double>::from({1, 2}, {0.0, 1.0});
  CHECK(mean_cosine_rows(a, b) == 0.0);

  CHECK(accuracy({1, 2, 3}, {1, 2, 3}) == 1.0);
  CHECK(std::abs(accuracy({1, 2, 3, 0}, {1, 2, 0, 0}) - 0.75) < 1e-12);
}

TEST_CASE("metrics ignore evaluation-set order") {
  Rng rng(127);
  std::vector<double> s;
  std::vector<int> y;
  random_instance(rng, 40, s, y);
  y[0] = 1;
  y[1] = 0;  // both classes guaranteed

  std::vector<std::size_t> perm(s.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(0, static_cast<i64>(i) - 1)]);
  std::vector<double> ps(s.size());
  std::vector<int> py(y.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    ps[i] = s[perm[i]];
    py[i] = y[perm[i]];
  }

  CHECK(*auroc(s, y) == *auroc(ps, py));
  CHECK(*auprc(s, y) == *auprc(ps, py));
  CHECK(*binary_f1(s, y) == *binary_f1(ps, py));
}

TEST_SUITE_END();
