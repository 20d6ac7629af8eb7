#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mambarate {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// A run is reproduced from one root seed. Every consumer of randomness gets
// its own stream derived from (root, stream id), so adding draws to one
// consumer never shifts another.
enum class SeedStream : uint64_t {
  Split = 1,    // dataset split shuffle
  Init = 2,     // parameter initialization
  Shuffle = 3,  // per-epoch training order
  Noise = 4,    // rating noise before encoding
};

inline uint64_t derive_seed(uint64_t root, SeedStream stream) {
  return splitmix64(root ^ splitmix64(static_cast<uint64_t>(stream)));
}

// mt19937_64 with hand-rolled draw helpers. std::uniform_real_distribution
// and std::shuffle are implementation-defined, which would break bit-for-bit
// reproducibility across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased uniform integer in [0, n), n >= 1
  uint64_t below(uint64_t n) {
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void restore(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mambarate
