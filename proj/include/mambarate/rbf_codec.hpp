#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mambarate/rng.hpp"

namespace mambarate {

// Gaussian RBF rating codec. A scalar rating x in [range_min, range_max] is
// encoded as its responses exp(-(x - c_k)^2 / sigma^2) to num_centers evenly
// spaced centers; decoding picks the center with the maximum response.
struct RbfConfig {
  int64_t num_centers = 16;
  double range_min = 1.0;
  double range_max = 5.0;
  // defaults to the center spacing when unset
  std::optional<double> sigma;
  double noise_scale = 1e-4;
  uint64_t seed = 0;

  double spacing() const { return (range_max - range_min) / static_cast<double>(num_centers - 1); }
  double sigma_value() const { return sigma ? *sigma : spacing(); }
  void validate() const;
};

struct RbfTarget {
  std::vector<double> values;  // num_centers responses, each in (0, 1]
};

std::vector<double> centers(const RbfConfig& cfg);

// apply_noise adds uniform noise on [-noise_scale, +noise_scale] to x before
// encoding; the noisy value is clamped back into [range_min, range_max].
// rng must be non-null when apply_noise is set.
RbfTarget encode(double x, const RbfConfig& cfg, bool apply_noise = false, Rng* rng = nullptr);

// argmax decode; ties break toward the lower center index
double decode(const std::vector<double>& t, const RbfConfig& cfg);

}  // namespace mambarate
