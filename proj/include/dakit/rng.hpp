#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dakit/errors.hpp"

namespace da::numerics {

// Counter-based generator: Philox-4x32 with 10 rounds (Salmon et al. 2011).
// The 64-bit key is the master seed; the high 64 bits of the 128-bit counter
// carry the stream index and the low 64 bits count blocks within the stream.
// Every (master_seed, stream_index) pair therefore names an independent
// sequence that does not depend on scheduling or on how many other streams
// exist.
inline constexpr std::string_view kRngAlgorithmId = "philox4x32-10";

class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t master_seed, std::uint64_t stream_index);

  std::uint64_t master_seed() const { return master_seed_; }
  std::uint64_t stream_index() const { return stream_index_; }

  std::uint32_t next_u32();

  // Two consecutive u32 draws, low word first.
  std::uint64_t next_u64();

  // Uniform double in [0, 1): top 53 bits of one u64 draw, scaled by 2^-53.
  double next_uniform();

  // Uniform double in [lo, hi).
  double next_uniform(double lo, double hi);

  // Unbiased integer in [0, bound) via rejection on the top multiple of bound.
  std::uint64_t next_below(std::uint64_t bound);

  // Standard normals by the Box-Muller transform. Values are produced in
  // pairs; each pair consumes exactly two uniforms in a fixed order:
  //   u1 = 1 - next_uniform()        (in (0, 1], keeps the log finite)
  //   u2 = next_uniform()
  //   r  = sqrt(-2 ln u1)
  //   z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)
  // For an odd output length the trailing z1 is discarded; no state is
  // cached across calls beyond the stream counter.
  void fill_standard_normal(std::span<double> out);

  // Raw Philox-4x32-10 block function, exposed for known-answer tests.
  static std::array<std::uint32_t, 4> philox4x32_10(
      std::array<std::uint32_t, 4> counter, std::array<std::uint32_t, 2> key);

 private:
  void refill();

  std::uint64_t master_seed_;
  std::uint64_t stream_index_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int cursor_ = 4;  // 4 = buffer exhausted
};

// A d-dimensional isotropic Gaussian: mean plus covariance A * I.
struct GaussianSpec {
  std::vector<double> mean;
  double covariance_magnitude = 0.0;  // the scalar A, >= 0
};

// mean + sqrt(A) * z with z standard normal per component.
std::vector<double> gaussian_sample(RngStream& rng, const GaussianSpec& spec,
                                    std::size_t dim);

// Stream allocation policy for the whole toolkit. Stream indices compose a
// role tag (8 bits), a trajectory index (32 bits) and a member/layer index
// (24 bits) so that no two uses of the master seed ever share a stream.
enum class StreamRole : std::uint64_t {
  initial_condition = 1,    // truth initial-condition box draws
  observation_mean = 2,     // per-trajectory measurement-mean noise
  member_perturbation = 3,  // per-(trajectory, member) measurement draws
  fcnn_init = 4,            // per-layer weight initialization
  fcnn_shuffle = 5,         // epoch shuffle schedule
};

constexpr std::uint64_t stream_id(StreamRole role, std::uint64_t trajectory,
                                  std::uint64_t member = 0) {
  return (static_cast<std::uint64_t>(role) << 56) | (trajectory << 24) | member;
}

class StreamFactory {
 public:
  explicit StreamFactory(std::uint64_t master_seed) : seed_(master_seed) {}

  std::uint64_t master_seed() const { return seed_; }

  RngStream initial_condition(std::uint32_t trajectory) const {
    return {seed_, stream_id(StreamRole::initial_condition, trajectory)};
  }
  RngStream observation_mean(std::uint32_t trajectory) const {
    return {seed_, stream_id(StreamRole::observation_mean, trajectory)};
  }
  // Keyed by (trajectory, member) only: runs of different ensemble sizes over
  // the same trajectory consume identical per-member sequences, so growing
  // the ensemble never changes the members already present.
  RngStream member_perturbation(std::uint32_t trajectory,
                                std::uint32_t member) const {
    return {seed_, stream_id(StreamRole::member_perturbation, trajectory, member)};
  }
  RngStream fcnn_init(std::uint32_t layer) const {
    return {seed_, stream_id(StreamRole::fcnn_init, 0, layer)};
  }
  RngStream fcnn_shuffle() const {
    return {seed_, stream_id(StreamRole::fcnn_shuffle, 0)};
  }

 private:
  std::uint64_t seed_;
};

}  // namespace da::numerics
