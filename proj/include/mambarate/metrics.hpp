#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mambarate {

struct ScorePair {
  std::string utterance_id;
  std::optional<std::string> system_id;
  double predicted = 0.0;
  double reference = 0.0;
};

enum class MetricLevel { Utterance, System };
enum class TauVariant { TauB, TauA };

double mse(const std::vector<ScorePair>& pairs);

// Pearson LCC, population convention; errors on constant input instead of
// returning NaN.
double pearson(const std::vector<ScorePair>& pairs);

// Spearman SRCC: Pearson over average ranks (ties get the mean of their
// rank positions).
double spearman(const std::vector<ScorePair>& pairs);

// Kendall tau. TauB (default) applies the tie correction
//   (C - D) / sqrt((C + D + Tx)(C + D + Ty))
// where Tx/Ty count pairs tied only in x / only in y; TauA divides by
// n(n-1)/2 instead.
double kendall_tau(const std::vector<ScorePair>& pairs, TauVariant variant = TauVariant::TauB);

// Collapses pairs to one pair per system (unweighted means). Pairs without a
// system_id are skipped with a note to warn_to, if given.
std::vector<ScorePair> system_level(const std::vector<ScorePair>& pairs,
                                    std::ostream* warn_to = nullptr);

struct MetricReport {
  MetricLevel level = MetricLevel::Utterance;
  int64_t n = 0;
  // nullopt when the metric is undefined for this input (constant or too few)
  std::optional<double> mse, lcc, srcc, ktau;
  std::vector<std::string> notes;
};

MetricReport compute_report(const std::vector<ScorePair>& pairs, MetricLevel level,
                            TauVariant variant = TauVariant::TauB);

// Aligned text table, one row per metric, one column per level present.
std::string format_report_table(const MetricReport& utterance,
                                const std::optional<MetricReport>& system);

// CSV rows: level,n,mse,lcc,srcc,ktau (empty cell when undefined)
std::string format_report_csv(const MetricReport& utterance,
                              const std::optional<MetricReport>& system);

}  // namespace mambarate
