#ifndef LCNN_RNG_HPP
#define LCNN_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

#include "lcnn/tensor.hpp"

namespace lcnn {

/// Seeded RNG with hand-rolled transforms so streams are bit-reproducible
/// independent of the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Derives an independent stream, e.g. per (seed, input index).
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(seed * 0x9E3779B97F4A7C15ull + index + 1);
  }

  double uniform() {  // [0, 1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_u64() { return engine_(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  Tensor normal_tensor(Shape shape, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = normal() * stddev;
    return t;
  }

  Tensor uniform_tensor(Shape shape, double lo, double hi) {
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace lcnn

#endif
