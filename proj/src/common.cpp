#include "weakflow/common.hpp"

#include <cstdlib>

namespace weakflow {

int default_threads() {
  if (const char* env = std::getenv("WEAKFLOW_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? int(hc) : 1;
}

void parallel_for(std::int64_t begin, std::int64_t end, int threads,
                  const std::function<void(std::int64_t, std::int64_t)>& chunk_fn) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  if (threads <= 1 || n == 1) {
    chunk_fn(begin, end);
    return;
  }
  const int nt = int(std::min<std::int64_t>(threads, n));
  std::vector<std::thread> pool;
  pool.reserve(nt);
  const std::int64_t chunk = (n + nt - 1) / nt;
  for (int k = 0; k < nt; ++k) {
    const std::int64_t lo = begin + k * chunk;
    const std::int64_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back(chunk_fn, lo, hi);
  }
  for (auto& th : pool) th.join();
}

void fft_pow2(Eigen::Ref<Eigen::VectorXcd> data, int sign) {
  const std::int64_t n = data.size();
  if (!is_pow2(n)) throw std::invalid_argument("fft size must be a power of two");
  // bit reversal
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * kPi / double(len);
    const cplx wl(std::cos(ang), std::sin(ang));
    for (std::int64_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::int64_t j = 0; j < len / 2; ++j) {
        const cplx u = data[i + j];
        const cplx v = data[i + j + len / 2] * w;
        data[i + j] = u + v;
        data[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (sign > 0) data /= double(n);
}

}  // namespace weakflow
