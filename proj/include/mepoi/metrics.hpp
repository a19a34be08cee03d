#pragma once

#include <optional>
#include <vector>

#include "mepoi/tensor.hpp"

namespace mepoi {

// Evaluation metrics for the downstream probing tasks. All of these operate
// on plain host data, outside the autodiff tape. Metrics that need both
// classes (or at least one positive) return nullopt when the input cannot
// support them, and macro averages skip such undefined components.

// Mann-Whitney AUROC: P(score_pos > score_neg) + 0.5 P(equal). Labels are
// 0/1. Undefined when either class is absent.
std::optional<double> auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Area under the precision-recall curve by step interpolation over the
// distinct score thresholds, descending. Undefined without positives.
std::optional<double> auprc(const std::vector<double>& scores, const std::vector<int>& labels);

// F1 of the positive class at `threshold` on the scores. Undefined when
// there are no positives in either labels or predictions.
std::optional<double> binary_f1(const std::vector<double>& scores, const std::vector<int>& labels,
                                double threshold = 0.5);

// Per-column metrics over an [n x k] multi-label task (rows = POIs, columns
// = weekly bins), macro-averaged over the columns that are defined.
std::optional<double> macro_f1_bins(const Tensor<double>& probs, const Tensor<double>& labels,
                                    double threshold = 0.5);
std::optional<double> macro_auroc_bins(const Tensor<double>& scores, const Tensor<double>& labels);

// Macro F1 over classes from hard predictions. Classes that never occur in
// the labels and are never predicted are skipped; a class with support but
// no correct predictions contributes 0.
std::optional<double> macro_f1_classes(const std::vector<int>& pred, const std::vector<int>& label,
                                       int num_classes);

// One-vs-rest AUPRC per class from an [n x C] score matrix, macro-averaged
// over the classes present in the labels.
std::optional<double> macro_auprc_ovr(const Tensor<double>& scores, const std::vector<int>& labels);

double accuracy(const std::vector<int>& pred, const std::vector<int>& label);

// Elementwise mean absolute error over two identically shaped tensors.
double mae(const Tensor<double>& pred, const Tensor<double>& truth);

// Cosine similarity per row, averaged over rows; zero rows score 0.
double mean_cosine_rows(const Tensor<double>& pred, const Tensor<double>& truth);

}  // namespace mepoi
