#include "mambarate/rbf_codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mambarate/error.hpp"

namespace mambarate {

void RbfConfig::validate() const {
  if (num_centers < 2) fail(ErrorCode::OutOfRange, "num_centers must be >= 2");
  if (!(range_max > range_min)) fail(ErrorCode::OutOfRange, "range_max must exceed range_min");
  if (sigma && !(*sigma > 0.0)) fail(ErrorCode::OutOfRange, "sigma must be positive");
  if (noise_scale < 0.0) fail(ErrorCode::OutOfRange, "noise_scale must be nonnegative");
}

std::vector<double> centers(const RbfConfig& cfg) {
  cfg.validate();
  std::vector<double> c(static_cast<size_t>(cfg.num_centers));
  const double step = cfg.spacing();
  for (int64_t k = 0; k < cfg.num_centers; ++k) {
    c[static_cast<size_t>(k)] = cfg.range_min + static_cast<double>(k) * step;
  }
  return c;
}

RbfTarget encode(double x, const RbfConfig& cfg, bool apply_noise, Rng* rng) {
  cfg.validate();
  if (x < cfg.range_min - 1e-9 || x > cfg.range_max + 1e-9) {
    fail(ErrorCode::OutOfRange, "rating " + std::to_string(x) + " outside [" +
                                    std::to_string(cfg.range_min) + ", " +
                                    std::to_string(cfg.range_max) + "]");
  }
  double xn = x;
  if (apply_noise && cfg.noise_scale > 0.0) {
    if (!rng) fail(ErrorCode::OutOfRange, "encode with noise requires an RNG");
    xn += rng->uniform(-cfg.noise_scale, cfg.noise_scale);
  }
  xn = std::clamp(xn, cfg.range_min, cfg.range_max);

  const std::vector<double> cs = centers(cfg);
  const double inv_s2 = 1.0 / (cfg.sigma_value() * cfg.sigma_value());
  RbfTarget t;
  t.values.resize(cs.size());
  for (size_t k = 0; k < cs.size(); ++k) {
    const double d = xn - cs[k];
    t.values[k] = std::exp(-d * d * inv_s2);
  }
  return t;
}

double decode(const std::vector<double>& t, const RbfConfig& cfg) {
  cfg.validate();
  if (static_cast<int64_t>(t.size()) != cfg.num_centers) {
    fail(ErrorCode::WrongDimension, "expected " + std::to_string(cfg.num_centers) +
                                        " components, got " + std::to_string(t.size()));
  }
  size_t best = 0;
  for (size_t k = 1; k < t.size(); ++k) {
    if (t[k] > t[best]) best = k;  // strict: ties keep the lower index
  }
  return cfg.range_min + static_cast<double>(best) * cfg.spacing();
}

}  // namespace mambarate
