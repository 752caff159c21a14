#include "tspnet/random.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "tspnet/errors.hpp"

namespace tspnet {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  if (n == 0) throw PreconditionError("Rng::uniform_int: empty range");
  return engine_() % n;
}

long long Rng::uniform_int(long long lo, long long hi) {
  if (hi < lo) throw PreconditionError("Rng::uniform_int: hi < lo");
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<long long>(uniform_int(span));
}

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw FormatError("invalid PRNG state", 0);
}

}  // namespace tspnet
