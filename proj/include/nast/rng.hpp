#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "nast/common.hpp"

namespace nast {

// Seeded generator with explicit draw helpers so streams are reproducible
// independent of standard-library distribution internals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive on both ends.
  Index uniform_int(Index lo, Index hi) {
    check_arg(lo <= hi, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<Index>(next_u64() % span);
  }

  // Box-Muller; the paired draw is discarded to keep state advancement simple.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  template <class T>
  void shuffle(std::vector<T>& xs) {
    for (Index i = static_cast<Index>(xs.size()) - 1; i > 0; --i) {
      const Index j = uniform_int(0, i);
      std::swap(xs[i], xs[j]);
    }
  }

  // n distinct values from [0, pool), in draw order.
  std::vector<Index> sample_without_replacement(Index pool, Index n) {
    check_arg(n >= 0 && n <= pool, "sample_without_replacement: n out of range");
    std::vector<Index> slots(pool);
    for (Index i = 0; i < pool; ++i) slots[i] = i;
    std::vector<Index> out;
    out.reserve(n);
    for (Index i = 0; i < n; ++i) {
      const Index j = uniform_int(i, pool - 1);
      std::swap(slots[i], slots[j]);
      out.push_back(slots[i]);
    }
    return out;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace nast
