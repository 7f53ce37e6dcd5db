#pragma once

#include <cstdint>
#include <random>

namespace imnd {

/// mt19937_64 plus a self-contained Box-Muller normal sampler. The standard
/// normal_distribution is implementation-defined, so byte-reproducible outputs
/// go through this instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(gen_);
  }

  std::uint64_t integer(std::uint64_t n);  // uniform in [0, n)
  double normal();                         // standard normal
  double normal(double mean, double std) { return mean + std * normal(); }

  std::uint64_t raw() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace imnd
