#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace tspnet {

// Portable PRNG. The engine is std::mt19937_64, whose output sequence is fixed
// by the C++ standard. The distributions below are spelled out explicitly
// (the std:: distributions are implementation-defined), so a seed produces
// the same stream on every conforming platform:
//   uniform()        = (u64 >> 11) * 2^-53                in [0, 1)
//   uniform_int(n)   = u64 % n                            in [0, n)
//   normal()         = Box-Muller on two uniform() draws, cosine branch,
//                      u1 replaced by 1 - u1 to avoid log(0)
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer uniformly drawn from [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Integer uniformly drawn from the closed range [lo, hi].
  long long uniform_int(long long lo, long long hi);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// In-place Fisher-Yates shuffle (std::shuffle is not portable).
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

}  // namespace tspnet
