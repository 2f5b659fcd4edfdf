#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace bsg {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Standard normal keyed on (seed, path, step): no state, so any path can be
// regenerated independently and in any order.
inline double keyed_normal(std::uint64_t seed, std::uint64_t path, std::uint64_t step) {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(path ^ splitmix64(step)));
  const std::uint64_t g = splitmix64(h);
  constexpr double kScale = 1.0 / 9007199254740992.0;  // 2^-53
  const double u1 = (static_cast<double>(h >> 11) + 1.0) * kScale;  // (0, 1]
  const double u2 = static_cast<double>(g >> 11) * kScale;          // [0, 1)
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

// Brownian increments dW_i ~ N(0, dt) for i = 0..steps-1 and the path W_0..W_steps.
inline void brownian_path(std::uint64_t seed, std::uint64_t path, int steps, double dt,
                          std::vector<double>& dW, std::vector<double>& W) {
  dW.resize(steps);
  W.resize(steps + 1);
  W[0] = 0.0;
  const double sd = std::sqrt(dt);
  for (int i = 0; i < steps; ++i) {
    dW[i] = sd * keyed_normal(seed, path, static_cast<std::uint64_t>(i));
    W[i + 1] = W[i] + dW[i];
  }
}

}  // namespace bsg
