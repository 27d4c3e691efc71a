#ifndef CFL_RNG_H_
#define CFL_RNG_H_

#include <cstdint>
#include <initializer_list>
#include <random>

namespace cfl {

// SplitMix64 finalizer. Used both as a seed mixer and to derive independent
// child seeds from a master seed.
constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a child seed from `master` and a path of integer tags, e.g.
// DeriveSeed(master, {kClientStream, client_id, kShuffleStream}). Each tag is
// folded in with a full mix, so siblings with different tags are unrelated and
// adding a new client never changes the streams of existing ones.
inline std::uint64_t DeriveSeed(std::uint64_t master,
                                std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = MixSeed(master);
  for (std::uint64_t tag : path) s = MixSeed(s ^ MixSeed(tag + 0x632be59bd9b4e019ULL));
  return s;
}

// Deterministic random source. All distributions are implemented here on top
// of the raw 64-bit engine so results do not depend on the standard library's
// unspecified distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(MixSeed(seed)) {}

  std::uint64_t NextU64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double Uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double Uniform(double lo, double hi) { return lo + (hi - lo) * Uniform(); }

  // Uniform integer in [0, n). Unbiased (rejection on the top range).
  std::uint64_t UniformInt(std::uint64_t n);

  // Standard normal via Box-Muller (no cached second value, so the stream
  // position is a pure function of the call count).
  double Normal();

  // Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 handled by boosting.
  double Gamma(double shape);

  template <typename It>
  void Shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = UniformInt(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cfl

#endif  // CFL_RNG_H_
