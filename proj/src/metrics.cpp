#include "mepoi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mepoi/common.hpp"

namespace mepoi {
namespace {

void check_paired(const std::vector<double>& scores, const std::vector<int>& labels) {
  check(scores.size() == labels.size(), "metric: scores and labels must pair up");
  check(!scores.empty(), "metric: empty input");
  for (int y : labels) check(y == 0 || y == 1, "metric: labels must be 0/1");
}

}  // namespace

std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_paired(scores, labels);
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y);
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Rank sum of the positives, with tied scores sharing their average rank.
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));  // 1-based
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_paired(scores, labels);
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y);
  if (pos == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  // Walk thresholds from the highest score down, admitting whole tie groups
  // at once; sum precision * recall-step after each group.
  double area = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1)
        ++tp;
      else
        ++fp;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

std::optional<double> binary_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                                double threshold) {
  check_paired(scores, labels);
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool hat = scores[i] >= threshold;
    if (hat && labels[i] == 1) ++tp;
    if (hat && labels[i] == 0) ++fp;
    if (!hat && labels[i] == 1) ++fn;
  }
  if (tp + fp + fn == 0) return std::nullopt;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::optional<double> macro_f1_bins(const Tensor<double>& probs, const Tensor<double>& labels,
                                    double threshold) {
  check(probs.rank() == 2 && probs.same_shape(labels), "macro_f1_bins: matching [n x k] inputs required");
  double sum = 0.0;
  i64 defined = 0;
  std::vector<double> col(static_cast<std::size_t>(probs.rows()));
  std::vector<int> lab(static_cast<std::size_t>(probs.rows()));
  for (i64 c = 0; c < probs.cols(); ++c) {
    for (i64 r = 0; r < probs.rows(); ++r) {
      col[static_cast<std::size_t>(r)] = probs.at(r, c);
      lab[static_cast<std::size_t>(r)] = labels.at(r, c) > 0.5 ? 1 : 0;
    }
    const auto f1 = binary_f1(col, lab, threshold);
    if (f1) {
      sum += *f1;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

std::optional<double> macro_auroc_bins(const Tensor<double>& scores, const Tensor<double>& labels) {
  check(scores.rank() == 2 && scores.same_shape(labels), "macro_auroc_bins: matching [n x k] inputs required");
  double sum = 0.0;
  i64 defined = 0;
  std::vector<double> col(static_cast<std::size_t>(scores.rows()));
  std::vector<int> lab(static_cast<std::size_t>(scores.rows()));
  for (i64 c = 0; c < scores.cols(); ++c) {
    for (i64 r = 0; r < scores.rows(); ++r) {
      col[static_cast<std::size_t>(r)] = scores.at(r, c);
      lab[static_cast<std::size_t>(r)] = labels.at(r, c) > 0.5 ? 1 : 0;
    }
    const auto auc = auroc(col, lab);
    if (auc) {
      sum += *auc;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

std::optional<double> macro_f1_classes(const std::vector<int>& pred, const std::vector<int>& label,
                                       int num_classes) {
  check(pred.size() == label.size(), "macro_f1_classes: predictions and labels must pair up");
  check(!pred.empty(), "macro_f1_classes: empty input");
  check(num_classes >= 2, "macro_f1_classes: at least two classes required");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    check(pred[i] >= 0 && pred[i] < num_classes, "macro_f1_classes: prediction out of range");
    check(label[i] >= 0 && label[i] < num_classes, "macro_f1_classes: label out of range");
  }
  double sum = 0.0;
  int defined = 0;
  for (int c = 0; c < num_classes; ++c) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && label[i] == c) ++tp;
      if (pred[i] == c && label[i] != c) ++fp;
      if (pred[i] != c && label[i] == c) ++fn;
    }
    if (tp + fp + fn == 0) continue;
    sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    ++defined;
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

std::optional<double> macro_auprc_ovr(const Tensor<double>& scores, const std::vector<int>& labels) {
  check(scores.rank() == 2, "macro_auprc_ovr: [n x C] scores required");
  check(static_cast<std::size_t>(scores.rows()) == labels.size(), "macro_auprc_ovr: one label per row required");
  double sum = 0.0;
  i64 defined = 0;
  std::vector<double> col(labels.size());
  std::vector<int> lab(labels.size());
  for (i64 c = 0; c < scores.cols(); ++c) {
    for (std::size_t r = 0; r < labels.size(); ++r) {
      col[r] = scores.at(static_cast<i64>(r), c);
      lab[r] = labels[r] == static_cast<int>(c) ? 1 : 0;
    }
    const auto ap = auprc(col, lab);
    if (ap) {
      sum += *ap;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return sum / static_cast<double>(defined);
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& label) {
  check(pred.size() == label.size(), "accuracy: predictions and labels must pair up");
  check(!pred.empty(), "accuracy: empty input");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == label[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

double mae(const Tensor<double>& pred, const Tensor<double>& truth) {
  check(pred.same_shape(truth), "mae: matching shapes required");
  check(pred.size() > 0, "mae: empty input");
  double sum = 0.0;
  for (i64 i = 0; i < pred.size(); ++i) sum += std::abs(pred.data()[i] - truth.data()[i]);
  return sum / static_cast<double>(pred.size());
}

double mean_cosine_rows(const Tensor<double>& pred, const Tensor<double>& truth) {
  check(pred.rank() == 2 && pred.same_shape(truth), "mean_cosine_rows: matching [n x k] inputs required");
  double sum = 0.0;
  for (i64 r = 0; r < pred.rows(); ++r) {
    double dot = 0.0, np = 0.0, nt = 0.0;
    for (i64 c = 0; c < pred.cols(); ++c) {
      dot += pred.at(r, c) * truth.at(r, c);
      np += pred.at(r, c) * pred.at(r, c);
      nt += truth.at(r, c) * truth.at(r, c);
    }
    const double denom = std::sqrt(np) * std::sqrt(nt);
    sum += denom > 0.0 ? dot / denom : 0.0;
  }
  return sum / static_cast<double>(pred.rows());
}

}  // namespace mepoi
