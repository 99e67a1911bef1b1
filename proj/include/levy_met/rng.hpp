#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace levy_met {

/// splitmix64 finalizer; used only to derive independent substream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of the substream addressed by (master, labels...). Distinct label
/// sequences give statistically independent mt19937_64 streams.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> labels) {
  std::uint64_t h = splitmix64(master);
  for (std::uint64_t label : labels) h = splitmix64(h ^ splitmix64(label + 0x632BE59BD9B4E019ULL));
  return h;
}

enum class Leg : std::uint64_t { forward = 1, backward = 2 };

/// Stream purposes inside one leg; kept separate so changing e.g. the drift
/// never shifts the jump draws.
enum class StreamPurpose : std::uint64_t { gaussian = 11, jumps = 12 };

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on (0, 1), 53-bit resolution, never exactly 0 or 1.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  double normal() { return normal_(engine_); }

  bool coin() { return (engine_() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace levy_met
