#include "heatclt/rng.hpp"

#include "heatclt/errors.hpp"

#include <boost/random/normal_distribution.hpp>

namespace heatclt {

CounterEngine::CounterEngine(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream) {
  std::uint64_t k = mix64(seed + 0x632BE59BD9B4E019ull);
  k = mix64(k ^ (stream * kGamma + 0x8CB92BA72F3D8DD7ull));
  k = mix64(k ^ (substream * 0xD1B54A32D192ED03ull + 0x2545F4914F6CDD1Dull));
  key_ = k;
}

void CounterEngine::refill() {
  const std::uint64_t base = key_ + counter_ * kGamma;
  for (int i = 0; i < kBuffer; ++i) {
    buffer_[i] = mix64(base + static_cast<std::uint64_t>(i + 1) * kGamma);
  }
  counter_ += kBuffer;
  pos_ = 0;
}

void fill_normals(std::uint64_t seed, std::uint64_t stream, std::uint64_t substream,
                  std::span<double> out) {
  CounterEngine engine(seed, stream, substream);
  boost::random::normal_distribution<double> normal;
  for (double& x : out) x = normal(engine);
}

void NoiseStream::fill_step(std::uint32_t step, std::size_t nodes, std::span<double> out) const {
  const std::size_t count = static_cast<std::size_t>(channels_) * nodes;
  if (out.size() < count) throw ConfigError("NoiseStream: output slice too small");
  fill_normals(seed_, replica_, step, out.first(count));
}

}  // namespace heatclt
