#pragma once

// Brute-force O(n^2) reference implementations of the rank metrics, kept
// independent of the library's sort/merge-based routines.

#include <cmath>
#include <vector>

#include "mambarate/metrics.hpp"

namespace oracles {

inline std::vector<double> brute_ranks(const std::vector<double>& v) {
  std::vector<double> ranks(v.size());
  for (size_t i = 0; i < v.size(); ++i) {
    double smaller = 0, equal = 0;
    for (size_t j = 0; j < v.size(); ++j) {
      if (v[j] < v[i]) ++smaller;
      if (j != i && v[j] == v[i]) ++equal;
    }
    ranks[i] = 1.0 + smaller + equal / 2.0;
  }
  return ranks;
}

inline double brute_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return (sxy - sx * sy / n) / std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
}

inline double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return brute_pearson(brute_ranks(x), brute_ranks(y));
}

inline double brute_kendall(const std::vector<double>& x, const std::vector<double>& y,
                            mambarate::TauVariant variant) {
  int64_t concordant = 0, discordant = 0, tie_x_only = 0, tie_y_only = 0;
  const int64_t n = static_cast<int64_t>(x.size());
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      const double dx = x[i] - x[j], dy = y[i] - y[j];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        ++tie_x_only;
      } else if (dy == 0) {
        ++tie_y_only;
      } else if (dx * dy > 0) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double numer = static_cast<double>(concordant - discordant);
  if (variant == mambarate::TauVariant::TauA) {
    return numer / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
  }
  const double fa = static_cast<double>(concordant + discordant + tie_x_only);
  const double fb = static_cast<double>(concordant + discordant + tie_y_only);
  return numer / std::sqrt(fa * fb);
}

inline std::vector<mambarate::ScorePair> to_pairs(const std::vector<double>& pred,
                                                  const std::vector<double>& ref) {
  std::vector<mambarate::ScorePair> out(pred.size());
  for (size_t i = 0; i < pred.size(); ++i) {
    out[i].utterance_id = "u" + std::to_string(i);
    out[i].predicted = pred[i];
    out[i].reference = ref[i];
  }
  return out;
}

}  // namespace oracles
