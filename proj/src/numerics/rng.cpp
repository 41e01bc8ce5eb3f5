#include "vts/numerics/rng.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numbers>

namespace vts {

std::uint64_t Rng::next_u64() noexcept {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::uniform_int(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
  if (hi <= lo) return lo;
  return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo) + 1));
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

Rng Rng::fork(std::uint64_t salt) const noexcept {
  Rng mixer(seed_ ^ (salt * 0xD1B54A32D192ED03ULL + 0x2545F4914F6CDD1DULL));
  return Rng(mixer.next_u64());
}

namespace {

std::atomic<int>& deterministic_flag() {
  static std::atomic<int> flag{-1};
  return flag;
}

}  // namespace

bool deterministic_mode() {
  auto& flag = deterministic_flag();
  int v = flag.load();
  if (v < 0) {
    const char* env = std::getenv("VTS_DETERMINISTIC");
    v = (env && std::strcmp(env, "1") == 0) ? 1 : 0;
    flag.store(v);
  }
  return v == 1;
}

void set_deterministic_mode(bool on) { deterministic_flag().store(on ? 1 : 0); }

}  // namespace vts
