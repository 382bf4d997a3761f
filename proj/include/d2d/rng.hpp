#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace d2d {

// Counter-based generator (Philox4x32-10).  Streams are identified by a
// 64-bit id placed in the high counter words, so distinct stream ids can
// never produce overlapping counter blocks under the same seed-derived key.
struct Philox4x32 {
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t(kMul0) * ctr[0];
      const std::uint64_t p1 = std::uint64_t(kMul1) * ctr[2];
      const std::array<std::uint32_t, 4> next = {
          std::uint32_t(p1 >> 32) ^ ctr[1] ^ key[0],
          std::uint32_t(p1),
          std::uint32_t(p0 >> 32) ^ ctr[3] ^ key[1],
          std::uint32_t(p0),
      };
      ctr = next;
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }
};

// 64-bit finalizer used to derive stream ids; bijective, so distinct inputs
// keep distinct stream ids.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Child streams are hashes of (parent id, child index); collisions across the
// whole derivation tree are possible only with ~2^-64 probability.
inline std::uint64_t derive_stream(std::uint64_t parent, std::uint64_t child) {
  return mix64(parent ^ (0x9E3779B97F4A7C15ull + mix64(child)));
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    const std::uint64_t k = mix64(seed);
    key_ = {std::uint32_t(k), std::uint32_t(k >> 32)};
    ctr_ = {0, 0, std::uint32_t(stream), std::uint32_t(stream >> 32)};
    buf_pos_ = 4;
    have_cached_normal_ = false;
  }

  RngStream substream(std::uint64_t child) const {
    return RngStream(seed_, derive_stream(stream_, child));
  }

  std::uint32_t next_u32() {
    if (buf_pos_ == 4) {
      buf_ = Philox4x32::block(ctr_, key_);
      if (++ctr_[0] == 0) ++ctr_[1];
      buf_pos_ = 0;
    }
    return buf_[buf_pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform on the open interval (0,1): 53 random bits offset by half an ulp.
  double uniform() {
    return (double(next_u64() >> 11) + 0.5) * 0x1p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_cached_normal_) {
      have_cached_normal_ = false;
      return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    cached_normal_ = r * std::sin(a);
    have_cached_normal_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Inverse-CDF draw over {0,...,k-1}; probs need not be exactly normalized,
  // roundoff overshoot falls back to the last positive cell.
  int categorical(const double* probs, int k) {
    const double u = uniform();
    double acc = 0.0;
    int last_positive = -1;
    for (int i = 0; i < k; ++i) {
      if (probs[i] < 0.0) throw std::invalid_argument("categorical: negative probability");
      if (probs[i] > 0.0) last_positive = i;
      acc += probs[i];
      if (u < acc) return i;
    }
    if (last_positive < 0) throw std::invalid_argument("categorical: all-zero probabilities");
    return last_positive;
  }

  // Marsaglia-Tsang; requires shape >= 1 (all shapes used here are integers >= 1).
  double gamma(double shape, double scale) {
    if (shape < 1.0) throw std::invalid_argument("gamma: shape must be >= 1");
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

  std::uint64_t stream_id() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> ctr_;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_;
  double cached_normal_ = 0.0;
  bool have_cached_normal_;
};

}  // namespace d2d
