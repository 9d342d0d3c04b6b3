#include "pama/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "pama/errors.hpp"

namespace pama {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw DimensionError("roc_auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (positive[order[t]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

Metrics evaluate(std::span<const std::uint32_t> labels, const Tensor& scores) {
  if (scores.rows() != labels.size()) throw DimensionError("evaluate: one score row per label required");
  const std::size_t n = labels.size();
  const std::size_t n_classes = scores.cols();
  Metrics m;
  m.count = n;
  if (n == 0) return m;

  std::vector<std::size_t> tp(n_classes, 0), fp(n_classes, 0), fn(n_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= n_classes) {
      throw BoundsError("evaluate: label " + std::to_string(labels[i]) + " >= n_classes " + std::to_string(n_classes));
    }
    const auto row = scores.row(i);
    const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (pred == labels[i]) {
      ++correct;
      ++tp[pred];
    } else {
      ++fp[pred];
      ++fn[labels[i]];
    }
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  double f1_sum = 0.0;
  std::size_t f1_classes = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    if (denom == 0) continue;  // class neither present nor predicted
    f1_sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
    ++f1_classes;
  }
  m.macro_f1 = f1_sum / static_cast<double>(f1_classes);

  std::vector<double> column(n);
  std::vector<std::uint8_t> positive(n);
  double auc_sum = 0.0;
  std::size_t auc_classes = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = scores(i, c);
      positive[i] = labels[i] == c ? 1 : 0;
    }
    const auto auc = roc_auc(column, positive);
    m.auc.push_back(auc);
    if (auc) {
      auc_sum += *auc;
      ++auc_classes;
    }
  }
  if (auc_classes > 0) m.macro_auc = auc_sum / static_cast<double>(auc_classes);
  return m;
}

nlohmann::json to_json(const Metrics& m) {
  nlohmann::json j;
  j["count"] = m.count;
  j["accuracy"] = m.accuracy;
  j["macro_f1"] = m.macro_f1;
  j["macro_auc"] = m.macro_auc ? nlohmann::json(*m.macro_auc) : nlohmann::json(nullptr);
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& a : m.auc) per_class.push_back(a ? nlohmann::json(*a) : nlohmann::json(nullptr));
  j["auc"] = per_class;
  return j;
}

}  // namespace pama
