#include "dakit/rng.hpp"

#include <cmath>

namespace da::numerics {

namespace {

constexpr std::uint32_t kMul0 = 0xD2511F53u;
constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline void mul_hi_lo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                      std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline std::array<std::uint32_t, 4> round_once(std::array<std::uint32_t, 4> c,
                                               std::array<std::uint32_t, 2> k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mul_hi_lo(kMul0, c[0], hi0, lo0);
  mul_hi_lo(kMul1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace

std::array<std::uint32_t, 4> RngStream::philox4x32_10(
    std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key) {
  for (int r = 0; r < 9; ++r) {
    counter = round_once(counter, key);
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return round_once(counter, key);
}

RngStream::RngStream(std::uint64_t master_seed, std::uint64_t stream_index)
    : master_seed_(master_seed), stream_index_(stream_index) {}

void RngStream::refill() {
  const std::array<std::uint32_t, 4> counter = {
      static_cast<std::uint32_t>(block_),
      static_cast<std::uint32_t>(block_ >> 32),
      static_cast<std::uint32_t>(stream_index_),
      static_cast<std::uint32_t>(stream_index_ >> 32),
  };
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(master_seed_),
      static_cast<std::uint32_t>(master_seed_ >> 32),
  };
  buffer_ = philox4x32_10(counter, key);
  ++block_;
  cursor_ = 0;
}

std::uint32_t RngStream::next_u32() {
  if (cursor_ >= 4) refill();
  return buffer_[cursor_++];
}

std::uint64_t RngStream::next_u64() {
  const std::uint64_t lo = next_u32();
  const std::uint64_t hi = next_u32();
  return lo | (hi << 32);
}

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
  return lo + next_uniform() * (hi - lo);
}

std::uint64_t RngStream::next_below(std::uint64_t bound) {
  if (bound == 0) throw ConfigError("next_below: bound must be positive");
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t draw;
  do {
    draw = next_u64();
  } while (draw >= limit);
  return draw % bound;
}

void RngStream::fill_standard_normal(std::span<double> out) {
  constexpr double kTwoPi = 6.283185307179586476925286766559;
  for (std::size_t i = 0; i < out.size(); i += 2) {
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    out[i] = r * std::cos(kTwoPi * u2);
    if (i + 1 < out.size()) out[i + 1] = r * std::sin(kTwoPi * u2);
  }
}

std::vector<double> gaussian_sample(RngStream& rng, const GaussianSpec& spec,
                                    std::size_t dim) {
  if (dim != spec.mean.size()) {
    throw ConfigError("gaussian_sample: dimension does not match mean length");
  }
  if (spec.covariance_magnitude < 0.0) {
    throw ConfigError("gaussian_sample: covariance magnitude must be >= 0");
  }
  std::vector<double> z(dim);
  rng.fill_standard_normal(z);
  const double scale = std::sqrt(spec.covariance_magnitude);
  for (std::size_t i = 0; i < dim; ++i) z[i] = spec.mean[i] + scale * z[i];
  return z;
}

}  // namespace da::numerics
