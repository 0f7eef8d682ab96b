#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace scq {

/// Counter-based generator: output i of a stream is a pure function of
/// (stream key, i), so substreams keyed by (seed, step) or (seed, column)
/// are reproducible on every platform independent of draw order elsewhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  /// Independent stream derived from this one's key and `key`. Does not
  /// advance this generator.
  Rng substream(std::uint64_t key) const;

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Standard Gumbel(0, 1) draws: -log(-log(U)), U uniform on (0, 1).
std::vector<double> rng_gumbel(Rng& rng, std::size_t n);

/// The transform applied by rng_gumbel, exposed for testing fixed points.
double gumbel_from_uniform(double u);

/// Order-sensitive 64-bit mixing of two words; used to derive substream keys.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

}  // namespace scq
