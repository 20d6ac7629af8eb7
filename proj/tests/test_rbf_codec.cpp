#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mambarate/error.hpp"
#include "mambarate/rbf_codec.hpp"
#include "mambarate/rng.hpp"

using namespace mambarate;

TEST_CASE("centers are evenly spaced over the rating range") {
  RbfConfig cfg;
  const auto cs = centers(cfg);
  REQUIRE(cs.size() == 16);
  CHECK(cs.front() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cs.back() == doctest::Approx(5.0).epsilon(1e-15));
  // second center sits one spacing above the minimum
  CHECK(std::fabs(cs[1] - (1.0 + 4.0 / 15.0)) < 1e-12);

  RbfConfig two;
  two.num_centers = 2;
  const auto cs2 = centers(two);
  CHECK(cs2[0] == 1.0);
  CHECK(cs2[1] == 5.0);
}

TEST_CASE("encoding a center gives a unit response there") {
  RbfConfig cfg;
  const auto t1 = encode(1.0, cfg);
  CHECK(t1.values[0] == 1.0);
  const auto t5 = encode(5.0, cfg);
  CHECK(t5.values[15] == 1.0);
  // responses decay strictly with distance from the hit center
  for (size_t k = 1; k < t5.values.size(); ++k) CHECK(t5.values[k] > t5.values[k - 1]);
}

TEST_CASE("midpoint between centers 7 and 8 responds equally on both") {
  RbfConfig cfg;
  const auto t = encode(3.0, cfg);
  const auto cs = centers(cfg);
  // 3.0 is equidistant from c_7 and c_8 at half a spacing = 2/15
  CHECK(std::fabs((3.0 - cs[7]) - 2.0 / 15.0) < 1e-12);
  CHECK(std::fabs((cs[8] - 3.0) - 2.0 / 15.0) < 1e-12);
  CHECK(t.values[7] == doctest::Approx(t.values[8]).epsilon(1e-12));
  const double s = cfg.sigma_value();
  const double expect = std::exp(-(2.0 / 15.0) * (2.0 / 15.0) / (s * s));
  CHECK(t.values[7] == doctest::Approx(expect).epsilon(1e-12));
  // the tie decodes toward the lower index
  CHECK(decode(t.values, cfg) == doctest::Approx(cs[7]).epsilon(1e-15));
}

TEST_CASE("round trip is exact on the center grid") {
  RbfConfig cfg;
  const auto cs = centers(cfg);
  for (double c : cs) {
    CHECK(decode(encode(c, cfg).values, cfg) == c);
  }
}

TEST_CASE("quantization error is bounded by half a spacing") {
  RbfConfig cfg;
  Rng rng(7);
  const double bound = cfg.spacing() / 2.0 + 1e-12;
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.uniform(1.0, 5.0);
    CHECK(std::fabs(decode(encode(x, cfg).values, cfg) - x) <= bound);
  }
}

TEST_CASE("responses decrease monotonically with distance") {
  RbfConfig cfg;
  const auto cs = centers(cfg);
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(1.0, 5.0);
    const auto t = encode(x, cfg);
    for (size_t j = 0; j + 1 < cs.size(); ++j) {
      for (size_t k = j + 1; k < cs.size(); ++k) {
        const double dj = std::fabs(x - cs[j]);
        const double dk = std::fabs(x - cs[k]);
        if (dj + 1e-12 < dk) {
          CHECK(t.values[j] > t.values[k]);
        }
      }
    }
  }
}

TEST_CASE("all responses live in (0, 1]") {
  RbfConfig cfg;
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const auto t = encode(rng.uniform(1.0, 5.0), cfg);
    for (double v : t.values) {
      CHECK(v > 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("noise does not move decodes away from boundaries") {
  RbfConfig cfg;  // noise_scale 1e-4
  Rng rng(11);
  Rng noise_rng(13);
  const auto cs = centers(cfg);
  for (int i = 0; i < 500; ++i) {
    const double x = rng.uniform(1.0, 5.0);
    // skip points within 1e-3 of a decision boundary (center midpoints)
    bool near_boundary = false;
    for (size_t k = 0; k + 1 < cs.size(); ++k) {
      if (std::fabs(x - 0.5 * (cs[k] + cs[k + 1])) < 1e-3) near_boundary = true;
    }
    if (near_boundary) continue;
    const double noiseless = decode(encode(x, cfg).values, cfg);
    const double noisy = decode(encode(x, cfg, true, &noise_rng).values, cfg);
    CHECK(noisy == noiseless);
  }
}

TEST_CASE("encode rejects ratings outside the range") {
  RbfConfig cfg;
  CHECK_THROWS_WITH_AS(encode(0.5, cfg), doctest::Contains("OutOfRange"), Error);
  CHECK_THROWS_WITH_AS(encode(5.1, cfg), doctest::Contains("OutOfRange"), Error);
  // tolerance window of 1e-9 around the range is accepted
  CHECK_NOTHROW(encode(1.0 - 5e-10, cfg));
  CHECK_NOTHROW(encode(5.0 + 5e-10, cfg));
}

TEST_CASE("decode rejects wrong dimensionality") {
  RbfConfig cfg;
  std::vector<double> short_vec(15, 0.1);
  CHECK_THROWS_WITH_AS(decode(short_vec, cfg), doctest::Contains("WrongDimension"), Error);
}

TEST_CASE("noisy encoding near the range edge stays bounded") {
  RbfConfig cfg;
  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    const auto t = encode(5.0, cfg, true, &rng);
    CHECK(t.values[15] <= 1.0);  // clamped back into range: response at c_15 stays max
    CHECK(decode(t.values, cfg) == 5.0);
  }
}
