#pragma once

// Shared basics: error types, natural-unit constants, deterministic seeding,
// a static-partition parallel_for, and a radix-2 FFT used by the split-step
// propagator. Natural units hbar = c = 1 throughout; velocities are in units
// of c, charges squared are measured against hbar*c = 1.

#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace weakflow {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846264338327950288;

// Fine-structure constant; e^2 = kAlpha in natural units.
inline constexpr double kAlpha = 7.2973525693e-3;

// ---------------------------------------------------------------------------
// Errors

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Postselected state orthogonal to the preselected one; weak value undefined.
struct ZeroOverlapError : Error {
  ZeroOverlapError() : Error("postselected state has zero overlap with the preselected state") {}
};

struct ZeroNormError : Error {
  ZeroNormError() : Error("state has numerically zero norm") {}
};

struct GridTooCoarseError : Error {
  explicit GridTooCoarseError(const std::string& what) : Error(what) {}
};

struct SubluminalInputError : Error {
  SubluminalInputError() : Error("speed must exceed c for a Mach cone to exist") {}
};

struct SplitStepUnconvergedError : Error {
  explicit SplitStepUnconvergedError(double dist)
      : Error("split-step kick did not converge under substep doubling (norm distance " +
              std::to_string(dist) + ")") {}
};

// Requested computation lies outside the numerically supported envelope.
struct UnsupportedRegimeError : Error {
  explicit UnsupportedRegimeError(const std::string& what) : Error(what) {}
};

// ---------------------------------------------------------------------------
// Deterministic seed derivation (splitmix64); shards must never share a stream.

inline std::uint64_t split_mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t shard) {
  return split_mix64(base ^ split_mix64(shard + 1));
}

// ---------------------------------------------------------------------------
// Threading. Static partition; chunk results must be merged in chunk order if
// a reduction is needed, so outputs stay bit-identical for any thread count.

int default_threads();  // WEAKFLOW_THREADS env var, else hardware_concurrency

void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& chunk_fn);

// ---------------------------------------------------------------------------
// In-place radix-2 FFT (n a power of two). sign=-1 forward, +1 inverse
// (inverse includes the 1/n factor).

void fft_pow2(Eigen::Ref<Eigen::VectorXcd> data, int sign);

inline bool is_pow2(std::int64_t n) { return n > 0 && (n & (n - 1)) == 0; }

// ---------------------------------------------------------------------------
// Small numeric helpers

// log(|a| + |b|)-style accumulation: log(e^x + e^y) without overflow.
inline double log_add(double x, double y) {
  if (x < y) std::swap(x, y);
  if (y == -std::numeric_limits<double>::infinity()) return x;
  return x + std::log1p(std::exp(y - x));
}

// exp that underflows to 0 quietly below the double range.
inline double exp_floor(double logx) {
  return logx < -745.0 ? 0.0 : std::exp(logx);
}

}  // namespace weakflow
