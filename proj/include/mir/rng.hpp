#ifndef MIR_RNG_HPP
#define MIR_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace mir {

// splitmix64; used to derive independent seeds from (base, tags...) so every
// randomized stage owns its own stream regardless of execution order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base) { return splitmix64(base); }

template <class... Tags>
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, Tags... rest) {
  return derive_seed(splitmix64(base ^ (tag + 0x9e3779b97f4a7c15ULL)), rest...);
}

// Hash a short string tag into the seed chain.
inline std::uint64_t tag_hash(const char* s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 1099511628211ULL;
  return h;
}

// mt19937_64 wrapped with explicit distribution code so sequences are
// bit-identical across standard libraries, plus a draw counter used to assert
// that eval-mode forwards consume no randomness.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t draws() const { return draws_; }

  // Process-wide draw counter across every Rng instance. Tests snapshot it
  // around an eval-mode forward to prove the pass consumed no randomness.
  static std::uint64_t global_draws() { return global_draws_ref(); }

  std::uint64_t next_u64() {
    ++draws_;
    ++global_draws_ref();
    return gen_();
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller (no caching, deterministic sequence)
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // uniform integer in [0, n) by rejection, n >= 1
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) {
      ++draws_;
      ++global_draws_ref();
      return 0;
    }
    std::uint64_t limit = ~0ULL - (~0ULL % n);
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  std::uint64_t fork_seed() { return splitmix64(next_u64()); }

 private:
  static std::uint64_t& global_draws_ref() {
    static std::uint64_t n = 0;
    return n;
  }

  std::mt19937_64 gen_;
  std::uint64_t draws_ = 0;
};

// Fisher-Yates with the explicit bounded draw above; std::shuffle's sequence
// is implementation-defined, this one is not.
template <class T>
void deterministic_shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace mir

#endif  // MIR_RNG_HPP
