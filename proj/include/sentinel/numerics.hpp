#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace sentinel {

/// Dense vector of 64-bit reals. All statistics in this project run on these.
using Vec = std::vector<double>;

bool all_finite(const Vec& v);
double vec_mean(const Vec& v);
double l2_norm(const Vec& v);

/// Linear-interpolation quantile of the sorted values, rank = q * (n - 1).
/// Throws "empty-history" on empty input.
double percentile(Vec values, double q);

/// Inverse error function via bisection on std::erf, |result error| <= 1e-10.
/// Throws "out-of-domain" for |y| >= 1.
double erfinv(double y);

/// (v - mean) / population-std. Zero vector when std < 1e-12.
/// Throws "degenerate-vector" for fewer than two entries.
Vec whiten(const Vec& v);

/// 1-D optimal transport between equal-size samples: mean absolute
/// difference of the sorted vectors. Throws "shape-mismatch".
double wasserstein1d(Vec a, Vec b);

uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull);
uint64_t fnv1a64_u64(uint64_t value, uint64_t h = 14695981039346656037ull);

/// Immutable descriptor of a deterministic random stream. Identical
/// (seed, stream_id, draw index) yields identical values on every platform.
struct RngStream {
  uint64_t seed = 0;
  std::string stream_id;
};

/// splitmix64 draw sequence keyed by (seed, stream id). Cheap to copy;
/// derive() forks an independent child stream without consuming draws.
class Rng {
 public:
  explicit Rng(const RngStream& stream);
  Rng(uint64_t seed, std::string_view stream_id);

  uint64_t next_u64();
  double uniform();              // [0, 1)
  double normal();               // N(0, 1), Box-Muller, two draws per call
  size_t uniform_index(size_t n);  // uniform in [0, n)

  Rng derive(std::string_view label) const;

 private:
  explicit Rng(uint64_t raw_state) : state_(raw_state) {}
  uint64_t state_;
};

}  // namespace sentinel
