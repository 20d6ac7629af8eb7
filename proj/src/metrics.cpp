#include "mambarate/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "mambarate/error.hpp"

namespace mambarate {

namespace {

void check_finite(const std::vector<ScorePair>& pairs) {
  for (const auto& p : pairs) {
    if (!std::isfinite(p.predicted) || !std::isfinite(p.reference)) {
      fail(ErrorCode::NonFiniteValue, "non-finite score for \"" + p.utterance_id + "\"");
    }
  }
}

std::vector<double> column(const std::vector<ScorePair>& pairs, bool predicted) {
  std::vector<double> v(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) v[i] = predicted ? pairs[i].predicted : pairs[i].reference;
  return v;
}

double pearson_raw(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    fail(ErrorCode::ConstantInput, "correlation undefined for constant input");
  }
  return sxy / std::sqrt(sxx * syy);
}

// average ranks, ties get the mean of their 1-based positions
std::vector<double> average_ranks(const std::vector<double>& v) {
  const size_t n = v.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// counts pairs (i, j), i < j in the given order, with strictly decreasing
// values -- a merge sort that tallies inversions
int64_t count_inversions(std::vector<double>& v, std::vector<double>& tmp, size_t lo, size_t hi) {
  if (hi - lo < 2) return 0;
  const size_t mid = lo + (hi - lo) / 2;
  int64_t cnt = count_inversions(v, tmp, lo, mid) + count_inversions(v, tmp, mid, hi);
  size_t a = lo, b = mid, o = lo;
  while (a < mid && b < hi) {
    if (v[b] < v[a]) {
      cnt += static_cast<int64_t>(mid - a);
      tmp[o++] = v[b++];
    } else {
      tmp[o++] = v[a++];
    }
  }
  while (a < mid) tmp[o++] = v[a++];
  while (b < hi) tmp[o++] = v[b++];
  std::copy(tmp.begin() + static_cast<ptrdiff_t>(lo), tmp.begin() + static_cast<ptrdiff_t>(hi),
            v.begin() + static_cast<ptrdiff_t>(lo));
  return cnt;
}

int64_t tied_pairs(const std::vector<double>& sorted) {
  int64_t total = 0;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i;
    while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
    const int64_t run = static_cast<int64_t>(j - i + 1);
    total += run * (run - 1) / 2;
    i = j + 1;
  }
  return total;
}

std::string format_cell(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

}  // namespace

double mse(const std::vector<ScorePair>& pairs) {
  if (pairs.empty()) fail(ErrorCode::EmptyInput, "mse over zero pairs");
  check_finite(pairs);
  double acc = 0.0;
  for (const auto& p : pairs) {
    const double d = p.predicted - p.reference;
    acc += d * d;
  }
  return acc / static_cast<double>(pairs.size());
}

double pearson(const std::vector<ScorePair>& pairs) {
  if (pairs.size() < 2) fail(ErrorCode::TooFewSamples, "pearson needs n >= 2");
  check_finite(pairs);
  return pearson_raw(column(pairs, true), column(pairs, false));
}

double spearman(const std::vector<ScorePair>& pairs) {
  if (pairs.size() < 2) fail(ErrorCode::TooFewSamples, "spearman needs n >= 2");
  check_finite(pairs);
  return pearson_raw(average_ranks(column(pairs, true)), average_ranks(column(pairs, false)));
}

double kendall_tau(const std::vector<ScorePair>& pairs, TauVariant variant) {
  const int64_t n = static_cast<int64_t>(pairs.size());
  if (n < 2) fail(ErrorCode::TooFewSamples, "kendall_tau needs n >= 2");
  check_finite(pairs);

  // sort by (x, y); discordant count = inversions of the y sequence
  std::vector<size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pairs[a].predicted != pairs[b].predicted) return pairs[a].predicted < pairs[b].predicted;
    return pairs[a].reference < pairs[b].reference;
  });
  std::vector<double> y_sorted(pairs.size());
  std::vector<double> xy_x(pairs.size()), xy_y(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) {
    y_sorted[i] = pairs[order[i]].reference;
    xy_x[i] = pairs[order[i]].predicted;
    xy_y[i] = pairs[order[i]].reference;
  }
  std::vector<double> tmp(pairs.size());
  std::vector<double> y_work = y_sorted;
  const int64_t discordant = count_inversions(y_work, tmp, 0, y_work.size());

  const int64_t total = n * (n - 1) / 2;
  std::vector<double> xs = column(pairs, true);
  std::vector<double> ys = column(pairs, false);
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  const int64_t ties_x = tied_pairs(xs);  // pairs tied in x (incl. tied in both)
  const int64_t ties_y = tied_pairs(ys);
  // pairs tied in both: runs of identical (x, y)
  int64_t ties_xy = 0;
  {
    size_t i = 0;
    while (i < xy_x.size()) {
      size_t j = i;
      while (j + 1 < xy_x.size() && xy_x[j + 1] == xy_x[i] && xy_y[j + 1] == xy_y[i]) ++j;
      const int64_t run = static_cast<int64_t>(j - i + 1);
      ties_xy += run * (run - 1) / 2;
      i = j + 1;
    }
  }

  const int64_t concordant = total - ties_x - ties_y + ties_xy - discordant;
  const int64_t numer = concordant - discordant;
  if (variant == TauVariant::TauA) {
    return static_cast<double>(numer) / static_cast<double>(total);
  }
  const double fx = static_cast<double>(total - ties_x);  // = C + D + ties only in y
  const double fy = static_cast<double>(total - ties_y);  // = C + D + ties only in x
  if (fx == 0.0 || fy == 0.0) {
    fail(ErrorCode::ConstantInput, "kendall_tau undefined for constant input");
  }
  return static_cast<double>(numer) / std::sqrt(fx * fy);
}

std::vector<ScorePair> system_level(const std::vector<ScorePair>& pairs, std::ostream* warn_to) {
  check_finite(pairs);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_system;
  size_t skipped = 0;
  for (const auto& p : pairs) {
    if (!p.system_id) {
      ++skipped;
      if (warn_to) {
        *warn_to << "warning: utterance \"" << p.utterance_id
                 << "\" has no system_id, skipped at system level\n";
      }
      continue;
    }
    auto& buckets = by_system[*p.system_id];
    buckets.first.push_back(p.predicted);
    buckets.second.push_back(p.reference);
  }
  if (by_system.empty()) {
    fail(ErrorCode::NoSystemIds, "no pairs carry a system_id (" + std::to_string(skipped) + " skipped)");
  }
  std::vector<ScorePair> out;
  out.reserve(by_system.size());
  for (const auto& [system, buckets] : by_system) {
    ScorePair sp;
    sp.utterance_id = system;
    sp.system_id = system;
    sp.predicted = std::accumulate(buckets.first.begin(), buckets.first.end(), 0.0) /
                   static_cast<double>(buckets.first.size());
    sp.reference = std::accumulate(buckets.second.begin(), buckets.second.end(), 0.0) /
                   static_cast<double>(buckets.second.size());
    out.push_back(std::move(sp));
  }
  return out;
}

MetricReport compute_report(const std::vector<ScorePair>& pairs, MetricLevel level,
                            TauVariant variant) {
  MetricReport rep;
  rep.level = level;
  rep.n = static_cast<int64_t>(pairs.size());
  auto guard = [&rep](const char* name, auto fn) -> std::optional<double> {
    try {
      return fn();
    } catch (const Error& e) {
      rep.notes.push_back(std::string(name) + ": " + e.what());
      return std::nullopt;
    }
  };
  rep.mse = guard("mse", [&] { return mse(pairs); });
  rep.lcc = guard("lcc", [&] { return pearson(pairs); });
  rep.srcc = guard("srcc", [&] { return spearman(pairs); });
  rep.ktau = guard("ktau", [&] { return kendall_tau(pairs, variant); });
  return rep;
}

namespace {

// the direction arrows are multi-byte UTF-8 but render one column wide
size_t display_width(const std::string& s) {
  size_t w = 0;
  for (size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    i += c >= 0xE0 ? 3 : (c >= 0xC0 ? 2 : 1);
    ++w;
  }
  return w;
}

std::string pad_name(const std::string& s, size_t width) {
  std::string out = s;
  for (size_t w = display_width(s); w < width; ++w) out += ' ';
  return out;
}

std::string pad_cell(const std::string& s, size_t width) {
  std::string out;
  for (size_t w = s.size(); w < width; ++w) out += ' ';
  return out + s;
}

}  // namespace

std::string format_report_table(const MetricReport& utterance,
                                const std::optional<MetricReport>& system) {
  // mirrors the usual MOS table: metric rows with direction arrows,
  // utterance (U) and system (S) columns
  constexpr size_t kName = 8, kCell = 10;
  const char* names[4] = {"MSE ↓", "LCC ↑", "SRCC ↑", "KTAU ↑"};
  const std::optional<double> ucol[4] = {utterance.mse, utterance.lcc, utterance.srcc,
                                         utterance.ktau};
  const std::optional<double> scol[4] = {system ? system->mse : std::nullopt,
                                         system ? system->lcc : std::nullopt,
                                         system ? system->srcc : std::nullopt,
                                         system ? system->ktau : std::nullopt};
  std::string out = pad_name("", kName) + pad_cell("U", kCell);
  if (system) out += pad_cell("S", kCell);
  out += "\n";
  for (int i = 0; i < 4; ++i) {
    out += pad_name(names[i], kName) + pad_cell(format_cell(ucol[i]), kCell);
    if (system) out += pad_cell(format_cell(scol[i]), kCell);
    out += "\n";
  }
  out += pad_name("n", kName) + pad_cell(std::to_string(utterance.n), kCell);
  if (system) out += pad_cell(std::to_string(system->n), kCell);
  out += "\n";
  return out;
}

namespace {

std::string csv_cell(const std::optional<double>& v) {
  if (!v) return "";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", *v);
  return buf;
}

std::string csv_row(const MetricReport& r) {
  const char* level = r.level == MetricLevel::Utterance ? "utterance" : "system";
  std::string out = level;
  out += "," + std::to_string(r.n);
  out += "," + csv_cell(r.mse);
  out += "," + csv_cell(r.lcc);
  out += "," + csv_cell(r.srcc);
  out += "," + csv_cell(r.ktau);
  out += "\n";
  return out;
}

}  // namespace

std::string format_report_csv(const MetricReport& utterance,
                              const std::optional<MetricReport>& system) {
  std::string out = "level,n,mse,lcc,srcc,ktau\n";
  out += csv_row(utterance);
  if (system) out += csv_row(*system);
  return out;
}

}  // namespace mambarate
