#pragma once

// Portable random sampling.
//
// The engine is std::mt19937_64, whose output sequence for a given seed
// is pinned by the C++ standard. The standard library's *distributions*
// are not portable across implementations, so every sampler needed by
// the simulator is implemented here from engine bits with a documented
// algorithm. Given a seed, every sequence produced by this header is
// bit-identical on any conforming platform.
//
// Stream splitting: substream_seed(master, idx) hashes the master seed
// together with the substream index through the SplitMix64 finalizer.
// Parallel code assigns one substream per unit of work (replication,
// bootstrap sample), so results never depend on the thread count.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace panelcount {

using RngEngine = std::mt19937_64;

/// SplitMix64 finalizer: a bijective 64-bit mix with good avalanche.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seed for substream `idx` of a master seed. Distinct indices give
/// independent-for-practical-purposes engine states.
inline std::uint64_t substream_seed(std::uint64_t master, std::uint64_t idx) {
  return mix64(master ^ ((idx + 1) * 0x9E3779B97F4A7C15ULL));
}

/// Uniform on (0, 1), strictly excluding both endpoints: the top 53 bits
/// of the engine output, centered on the grid (x + 1/2) 2^-53.
inline double uniform01(RngEngine& rng) {
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

/// Exponential with rate parameter `rate` (mean 1/rate) by inversion.
inline double exponential_rate(RngEngine& rng, double rate) {
  if (!(rate > 0.0))
    throw std::invalid_argument("exponential_rate: rate must be positive");
  return -std::log(uniform01(rng)) / rate;
}

/// Standard normal via Box-Muller (cosine branch only, so each draw
/// consumes exactly two engine outputs and carries no hidden state).
inline double normal01(RngEngine& rng) {
  const double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

/// Inverse-Gaussian with mean mu and shape lambda by the
/// Michael-Schucany-Haas transformation: from nu ~ N(0,1), form the
/// smaller root x of the Wald equation and accept it with probability
/// mu/(mu+x), else return mu^2/x. Consumes exactly three engine outputs.
inline double inverse_gaussian(RngEngine& rng, double mu, double lambda) {
  if (!(mu > 0.0) || !(lambda > 0.0))
    throw std::invalid_argument(
        "inverse_gaussian: mu and lambda must be positive");
  const double nu = normal01(rng);
  const double y = nu * nu;
  const double x =
      mu + mu * mu * y / (2.0 * lambda) -
      mu / (2.0 * lambda) * std::sqrt(4.0 * mu * lambda * y + mu * mu * y * y);
  const double u = uniform01(rng);
  return (u <= mu / (mu + x)) ? x : mu * mu / x;
}

/// Poisson(lambda) by Knuth's product-of-uniforms inversion, exact for
/// lambda <= 500 (exp(-500) ~ 7e-218 is still a normal double); larger
/// means split by Poisson additivity. lambda = 0 returns 0 without
/// consuming engine output.
inline int poisson(RngEngine& rng, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument(
        "poisson: lambda must be finite and nonnegative");
  if (lambda == 0.0) return 0;
  if (lambda > 500.0) {
    const double half = lambda / 2.0;
    return poisson(rng, half) + poisson(rng, half);
  }
  const double limit = std::exp(-lambda);
  int x = 0;
  double p = uniform01(rng);
  while (p > limit) {
    ++x;
    p *= uniform01(rng);
  }
  return x;
}

/// Fisher-Yates shuffle driven by engine output modulo the range size.
/// The modulo bias is at most n/2^64 per draw -- far below anything a
/// statistical test at simulation scale can detect.
template <typename T>
void shuffle_in_place(RngEngine& rng, std::vector<T>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace panelcount
