#include "scq/rng.hpp"

#include <cmath>
#include <numbers>

namespace scq {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

// splitmix64 finalizer
constexpr std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix(mix(a + kGolden) ^ (b + 0x632BE59BD9B4E019ull + (a << 6) + (a >> 2)));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : key_(hash_combine(seed, stream)) {}

Rng Rng::substream(std::uint64_t key) const {
  Rng r(0);
  r.key_ = hash_combine(key_, key);
  return r;
}

std::uint64_t Rng::next_u64() {
  ++counter_;
  return mix(key_ + kGolden * counter_);
}

double Rng::uniform() {
  // 53 random bits, shifted by half an ulp so 0 and 1 are never produced.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) return 0;
  const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

std::vector<double> rng_gumbel(Rng& rng, std::size_t n) {
  std::vector<double> g(n);
  for (double& v : g) v = gumbel_from_uniform(rng.uniform());
  return g;
}

}  // namespace scq
