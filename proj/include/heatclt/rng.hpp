#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>

namespace heatclt {

/// SplitMix64 output mix (Stafford variant 13); a bijection on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Counter-based uniform random bit generator.
///
/// Word i of stream (seed, stream, substream) is mix64(key + (i + 1)·γ) where
/// the key hashes the three coordinates, i.e. the SplitMix64 sequence started
/// at that key. Every word is a pure function of its address, so replicas and
/// time steps need no shared state and can be regenerated independently.
class CounterEngine {
 public:
  using result_type = std::uint64_t;

  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  CounterEngine(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (pos_ == kBuffer) refill();
    return buffer_[pos_++];
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr int kBuffer = 64;

  void refill();

  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::array<std::uint64_t, kBuffer> buffer_{};
  int pos_ = kBuffer;
};

/// Standard normal variates driving one replica.
///
/// The slice for time step n is a pure function of (seed, replica_id, n), so
/// any step can be regenerated independently of the others.
class NoiseStream {
 public:
  NoiseStream(std::uint64_t seed, std::uint64_t replica_id, int channels)
      : seed_(seed), replica_(replica_id), channels_(channels) {}

  /// Fills out[j * nodes + node] for j < channels with i.i.d. N(0,1).
  void fill_step(std::uint32_t step, std::size_t nodes, std::span<double> out) const;

  int channels() const { return channels_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t replica_id() const { return replica_; }

 private:
  std::uint64_t seed_;
  std::uint64_t replica_;
  int channels_;
};

/// Fills `out` with i.i.d. N(0,1) from the stream (seed, stream, substream).
void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                  std::span<double> out);

}  // namespace heatclt
