#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "pama/tensor.hpp"

namespace pama {

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::optional<double>> auc;  // one-vs-rest, per class; absent without both positives and negatives
  std::optional<double> macro_auc;         // mean over the classes whose AUC is defined
};

/// Metrics for `scores` (count x n_classes, any monotone score such as
/// softmax probabilities) against integer labels. The prediction is the
/// first argmax. Macro-F1 averages over classes that occur in the labels or
/// the predictions.
Metrics evaluate(std::span<const std::uint32_t> labels, const Tensor& scores);

/// Area under the ROC curve of `scores` against `positive` (nonzero = positive),
/// by the rank-sum statistic with tied scores sharing their average rank.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

nlohmann::json to_json(const Metrics& m);

}  // namespace pama
