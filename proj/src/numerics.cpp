#include "sentinel/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sentinel {

bool all_finite(const Vec& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double vec_mean(const Vec& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double l2_norm(const Vec& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double percentile(Vec values, double q) {
  if (values.empty()) throw std::runtime_error("empty-history");
  std::sort(values.begin(), values.end());
  if (q <= 0.0) return values.front();
  if (q >= 1.0) return values.back();
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

double erfinv(double y) {
  if (!(std::abs(y) < 1.0)) throw std::runtime_error("out-of-domain");
  if (y == 0.0) return 0.0;
  const double target = std::abs(y);
  // erf(6) == 1 to double precision, so [0, 6] brackets every representable y.
  double lo = 0.0, hi = 6.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (std::erf(mid) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-14) break;
  }
  const double x = 0.5 * (lo + hi);
  return y < 0.0 ? -x : x;
}

Vec whiten(const Vec& v) {
  if (v.size() < 2) throw std::runtime_error("degenerate-vector");
  const double mu = vec_mean(v);
  double var = 0.0;
  for (double x : v) var += (x - mu) * (x - mu);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  Vec out(v.size(), 0.0);
  if (sd < 1e-12) return out;
  for (size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mu) / sd;
  return out;
}

double wasserstein1d(Vec a, Vec b) {
  if (a.size() != b.size()) throw std::runtime_error("shape-mismatch");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return a.empty() ? 0.0 : s / static_cast<double>(a.size());
}

uint64_t fnv1a64(std::string_view bytes, uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t fnv1a64_u64(uint64_t value, uint64_t h) {
  for (int i = 0; i < 8; ++i) {
    h ^= (value >> (8 * i)) & 0xffu;
    h *= 1099511628211ull;
  }
  return h;
}

namespace {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(const RngStream& stream) : Rng(stream.seed, stream.stream_id) {}

Rng::Rng(uint64_t seed, std::string_view stream_id)
    : state_(fnv1a64(stream_id, fnv1a64_u64(seed))) {}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Open-interval u1 keeps the log finite; no spare caching so the draw
  // index stays a pure function of the call count.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

size_t Rng::uniform_index(size_t n) {
  if (n == 0) throw std::runtime_error("empty-range");
  return static_cast<size_t>(next_u64() % n);
}

Rng Rng::derive(std::string_view label) const {
  return Rng(fnv1a64(label, fnv1a64_u64(state_)));
}

}  // namespace sentinel
