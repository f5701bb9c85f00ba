// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "optmsm/errors.hpp"

namespace optmsm {

struct AucResult {
  bool defined = false;  // false when only one class is present
  double value = 0.0;
};

/// Mann-Whitney AUC by rank summation, O(n log n). Tied scores receive their
/// average rank, so the result equals (concordant + 0.5 * tied) / (P * N).
inline AucResult auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ConfigError("auc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) pos += y != 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return {false, 0.0};

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return scores[a] < scores[b]; });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  const double value = (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
  return {true, value};
}

/// Mean binary cross entropy with the same clamp as the training loss.
inline double logloss(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ConfigError("logloss: size mismatch");
  if (scores.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], 1e-12, 1.0 - 1e-12);
    s -= labels[i] != 0 ? std::log(p) : std::log(1.0 - p);
  }
  return s / static_cast<double>(scores.size());
}

}  // namespace optmsm
