#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <string>

namespace hypernst {

// Deterministic RNG. Normals use the polar method directly on the engine so
// the serialized state is the mt19937_64 engine alone (std::normal_distribution
// carries hidden state and is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

  // [0, 1)
  double uniform() { return (eng_() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds, rejection-sampled so every value is equally likely
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() / span * span;
    std::uint64_t r;
    do {
      r = eng_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Independent child stream; advances this engine by one draw.
  Rng fork(std::uint64_t salt = 0) { return Rng(eng_() ^ salt); }

  std::string save_state() const {
    std::ostringstream os;
    os << eng_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> eng_;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace hypernst
