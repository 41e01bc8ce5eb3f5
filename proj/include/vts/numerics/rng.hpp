#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace vts {

/// SplitMix64 stream (Steele, Lea & Flood 2014): state advances by the
/// golden-ratio increment and each output is a fixed 64-bit mix of the state.
/// All derived distributions below are implemented here rather than taken
/// from <random>, whose distributions are not bit-identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t next_u64() noexcept;

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); unbiased (rejection on the top range).
  std::uint64_t uniform_int(std::uint64_t n) noexcept;
  /// Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept;
  /// Standard normal via the Box-Muller transform.
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Independent child stream, e.g. per-video seeds.
  Rng fork(std::uint64_t salt) const noexcept;

  template <typename T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Process-wide deterministic switch: disables dropout and gating noise.
/// Initialised from VTS_DETERMINISTIC=1 on first query.
bool deterministic_mode();
void set_deterministic_mode(bool on);

class DeterministicGuard {
 public:
  explicit DeterministicGuard(bool on = true) : prev_(deterministic_mode()) { set_deterministic_mode(on); }
  ~DeterministicGuard() { set_deterministic_mode(prev_); }
  DeterministicGuard(const DeterministicGuard&) = delete;
  DeterministicGuard& operator=(const DeterministicGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace vts
