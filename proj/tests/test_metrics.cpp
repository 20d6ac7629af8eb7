#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "mambarate/error.hpp"
#include "mambarate/metrics.hpp"
#include "mambarate/rng.hpp"
#include "metric_oracles.hpp"

using namespace mambarate;
using oracles::brute_kendall;
using oracles::brute_pearson;
using oracles::brute_spearman;

namespace {

std::vector<ScorePair> make_pairs(const std::vector<double>& pred,
                                  const std::vector<double>& ref) {
  return oracles::to_pairs(pred, ref);
}

std::vector<double> random_values(Rng& rng, size_t n, bool with_ties) {
  std::vector<double> v(n);
  for (auto& x : v) {
    x = with_ties ? static_cast<double>(rng.below(4)) : rng.uniform(-2.0, 2.0);
  }
  return v;
}

}  // namespace

TEST_CASE("mse basics") {
  CHECK(mse(make_pairs({1, 2, 3}, {1, 2, 3})) == 0.0);
  CHECK(mse(make_pairs({1.5, 2.5}, {1.0, 2.0})) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK_THROWS_WITH_AS(mse({}), doctest::Contains("EmptyInput"), Error);

  Rng rng(2);
  std::vector<double> p = random_values(rng, 20, false), r = random_values(rng, 20, false);
  double expect = 0;
  for (size_t i = 0; i < p.size(); ++i) expect += (p[i] - r[i]) * (p[i] - r[i]);
  expect /= 20.0;
  CHECK(mse(make_pairs(p, r)) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("pearson basics and affine invariance") {
  CHECK(pearson(make_pairs({3, 5, 7, 9}, {1, 2, 3, 4})) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(make_pairs({-1, -2, -3}, {1, 2, 3})) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(pearson(make_pairs({1, 1, 1}, {1, 2, 3})),
                       doctest::Contains("ConstantInput"), Error);
  CHECK_THROWS_WITH_AS(pearson(make_pairs({1}, {1})), doctest::Contains("TooFewSamples"), Error);

  Rng rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    const auto x = random_values(rng, 30, false);
    const auto y = random_values(rng, 30, false);
    CHECK(pearson(make_pairs(x, y)) == doctest::Approx(brute_pearson(x, y)).epsilon(1e-12));
    // positive affine transforms leave it unchanged
    std::vector<double> x2(x.size());
    for (size_t i = 0; i < x.size(); ++i) x2[i] = 2.5 * x[i] + 1.0;
    CHECK(std::fabs(pearson(make_pairs(x2, y)) - pearson(make_pairs(x, y))) < 1e-12);
  }
}

TEST_CASE("spearman matches the brute-force rank oracle") {
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    const size_t n = 2 + rng.below(9);
    const bool ties = rep % 2 == 0;
    const auto x = random_values(rng, n, ties);
    const auto y = random_values(rng, n, ties);
    double expect;
    try {
      expect = brute_spearman(x, y);
    } catch (...) {
      continue;
    }
    if (!std::isfinite(expect)) {
      CHECK_THROWS_AS(spearman(make_pairs(x, y)), Error);
      continue;
    }
    CHECK(spearman(make_pairs(x, y)) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  Rng rng(9);
  const auto x = random_values(rng, 25, false);
  const auto y = random_values(rng, 25, false);
  std::vector<double> fx(x.size()), gx(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    fx[i] = std::exp(x[i]);        // strictly increasing
    gx[i] = -std::pow(x[i], 3.0);  // strictly decreasing
  }
  CHECK(spearman(make_pairs(fx, x)) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(spearman(make_pairs(gx, x)) == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(spearman(make_pairs(fx, y)) == doctest::Approx(spearman(make_pairs(x, y))).epsilon(1e-12));
}

TEST_CASE("kendall tau on three items without ties") {
  // orderings (1,2,3) vs (1,3,2): pairs (1,2),(1,3) concordant, (2,3) discordant
  const auto pairs = make_pairs({1, 2, 3}, {1, 3, 2});
  CHECK(kendall_tau(pairs) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(kendall_tau(make_pairs({1, 2, 3}, {10, 20, 30})) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("kendall tau matches the pair enumeration oracle") {
  Rng rng(11);
  for (int rep = 0; rep < 150; ++rep) {
    const size_t n = 2 + rng.below(9);
    const bool ties = rep % 2 == 0;
    const auto x = random_values(rng, n, ties);
    const auto y = random_values(rng, n, ties);
    for (auto variant : {TauVariant::TauB, TauVariant::TauA}) {
      const double expect = brute_kendall(x, y, variant);
      if (!std::isfinite(expect)) {
        CHECK_THROWS_AS(kendall_tau(make_pairs(x, y), variant), Error);
        continue;
      }
      CHECK(kendall_tau(make_pairs(x, y), variant) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("kendall tau is invariant under strictly increasing transforms") {
  Rng rng(13);
  const auto x = random_values(rng, 15, true);
  const auto y = random_values(rng, 15, true);
  std::vector<double> fx(x.size());
  for (size_t i = 0; i < x.size(); ++i) fx[i] = 3.0 * x[i] + 10.0;
  CHECK(kendall_tau(make_pairs(fx, y)) ==
        doctest::Approx(kendall_tau(make_pairs(x, y))).epsilon(1e-12));
}

TEST_CASE("system level aggregation averages per system") {
  std::vector<ScorePair> pairs = make_pairs({3.0, 4.0, 2.0, 1.0}, {3.5, 4.5, 2.5, 1.5});
  pairs[0].system_id = "sysA";
  pairs[1].system_id = "sysA";
  pairs[2].system_id = "sysB";
  pairs[3].system_id = "sysB";
  const auto sys = system_level(pairs);
  REQUIRE(sys.size() == 2);
  CHECK(sys[0].utterance_id == "sysA");
  CHECK(sys[0].predicted == doctest::Approx(3.5).epsilon(1e-15));
  CHECK(sys[0].reference == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(sys[1].predicted == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(sys[1].reference == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("pairs without system ids are skipped with a warning") {
  std::vector<ScorePair> pairs = make_pairs({3.0, 4.0, 2.0}, {3.5, 4.5, 2.5});
  pairs[0].system_id = "sysA";
  pairs[1].system_id = "sysA";
  std::ostringstream warnings;
  const auto sys = system_level(pairs, &warnings);
  CHECK(sys.size() == 1);
  CHECK(warnings.str().find("u2") != std::string::npos);

  // utterance-level metrics are computed from the same pairs unchanged
  CHECK(mse(pairs) == doctest::Approx(0.25).epsilon(1e-15));

  std::vector<ScorePair> none = make_pairs({1.0, 2.0}, {1.0, 2.0});
  CHECK_THROWS_WITH_AS(system_level(none), doctest::Contains("NoSystemIds"), Error);
}

TEST_CASE("single system leaves correlations undefined") {
  std::vector<ScorePair> pairs = make_pairs({3.0, 4.0}, {3.5, 4.5});
  pairs[0].system_id = "sysA";
  pairs[1].system_id = "sysA";
  const auto sys = system_level(pairs);
  REQUIRE(sys.size() == 1);
  const MetricReport rep = compute_report(sys, MetricLevel::System);
  CHECK(rep.mse.has_value());
  CHECK(!rep.lcc.has_value());
  CHECK(!rep.srcc.has_value());
  CHECK(!rep.ktau.has_value());
  CHECK(rep.notes.size() == 3);
}

TEST_CASE("report table layout") {
  MetricReport u;
  u.level = MetricLevel::Utterance;
  u.n = 6;
  u.mse = 0.0625;
  u.lcc = 0.9213;
  u.srcc = 0.8999;
  u.ktau = 0.7822;
  MetricReport s;
  s.level = MetricLevel::System;
  s.n = 3;
  s.mse = 0.0411;
  s.lcc = 0.9633;
  s.srcc = 0.9762;
  s.ktau = 0.9286;
  const std::string table = format_report_table(u, s);
  const std::string expected =
      "                 U         S\n"
      "MSE ↓     0.062500  0.041100\n"
      "LCC ↑     0.921300  0.963300\n"
      "SRCC ↑    0.899900  0.976200\n"
      "KTAU ↑    0.782200  0.928600\n"
      "n                6         3\n";
  CHECK(table == expected);

  const std::string csv = format_report_csv(u, s);
  CHECK(csv ==
        "level,n,mse,lcc,srcc,ktau\n"
        "utterance,6,0.0625,0.9213,0.8999,0.7822\n"
        "system,3,0.0411,0.9633,0.9762,0.9286\n");
}
