#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace slowfast {

/// Roles for independent substreams drawn for a single path.
enum class StreamRole : std::uint64_t {
  SlowNoise = 1,
  FastNoise = 2,
  DeviationNoise = 3,
  InitialState = 4,
  Auxiliary = 5,
  Probe = 6,
  Replica = 7,
};

/// SplitMix64 finalizer; a bijective 64-bit mixer.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seed of the substream identified by (master_seed, path_index, role).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master_seed,
                                                  std::uint64_t path_index,
                                                  StreamRole role) noexcept {
  std::uint64_t s = splitmix64(master_seed);
  s = splitmix64(s ^ splitmix64(path_index + 0x632be59bd9b4e019ULL));
  s = splitmix64(s ^ (static_cast<std::uint64_t>(role) * 0xd1b54a32d192ed03ULL));
  return s;
}

/// Random source for a single substream. Not shared between threads.
class Rng {
public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  Rng(std::uint64_t master_seed, std::uint64_t path_index, StreamRole role)
      : engine_(derive_seed(master_seed, path_index, role)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double exponential(double rate) {
    return std::exponential_distribution<double>(rate)(engine_);
  }
  std::uint64_t next() { return engine_(); }

  /// A child generator seeded from this one's output.
  Rng split(StreamRole role) { return Rng(next(), 0, role); }

  engine_type &engine() noexcept { return engine_; }

private:
  engine_type engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Produces the substreams of one ensemble member.
class StreamFactory {
public:
  StreamFactory(std::uint64_t master_seed, std::uint64_t path_index)
      : master_seed_(master_seed), path_index_(path_index) {}

  [[nodiscard]] Rng stream(StreamRole role) const {
    return Rng(master_seed_, path_index_, role);
  }
  [[nodiscard]] std::uint64_t master_seed() const noexcept { return master_seed_; }
  [[nodiscard]] std::uint64_t path_index() const noexcept { return path_index_; }

private:
  std::uint64_t master_seed_;
  std::uint64_t path_index_;
};

} // namespace slowfast
