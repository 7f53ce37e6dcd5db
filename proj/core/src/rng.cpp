#include "imnd/rng.hpp"

#include <cmath>
#include <numbers>

namespace imnd {

std::uint64_t Rng::integer(std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = n * (UINT64_MAX / n);
  std::uint64_t x;
  do {
    x = gen_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1, u2;
  do {
    u1 = std::generate_canonical<double, 53>(gen_);
  } while (u1 <= 0.0);
  u2 = std::generate_canonical<double, 53>(gen_);
  const double mag = std::sqrt(-2.0 * std::log(u1));
  spare_ = mag * std::sin(2.0 * std::numbers::pi * u2);
  has_spare_ = true;
  return mag * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace imnd
