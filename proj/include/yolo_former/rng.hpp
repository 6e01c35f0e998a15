#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace yf {

/// One step of the splitmix64 sequence; advances `state`.
std::uint64_t splitmix64(std::uint64_t& state);

/// Stable per-item seed: hash(global_seed, epoch, index).
std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t index);

/// Counter-seeded xoshiro256** generator.
///
/// The four state words are the first four splitmix64 outputs of
/// `seed ^ splitmix(stream) ^ splitmix(splitmix(counter))`. Integer draws are
/// identical on every platform; real-valued draws use 53-bit mantissas.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed, std::uint64_t stream = 0, std::uint64_t counter = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n), rejection-sampled (unbiased).
  std::uint64_t below(std::uint64_t n);
  /// Uniform integer on [lo, hi].
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  double gamma(double shape);
  double beta(double a, double b);
  std::vector<double> dirichlet(std::span<const double> alpha);

  /// Independent generator for a named sub-stream.
  SeededRng fork(std::uint64_t stream);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      using std::swap;
      swap(first[static_cast<long>(i - 1)], first[static_cast<long>(j)]);
    }
  }

 private:
  std::uint64_t s_[4];
};

}  // namespace yf
