#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace stseg {

// Error taxonomy; the CLI maps these onto distinct exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

inline constexpr std::uint8_t kVoidLabel = 255;

// Per-pixel class ids for one or more images; values in [0, num_classes) or kVoidLabel.
struct LabelMap {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> v;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_), v(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::int64_t numel() const { return n * h * w; }
  std::uint8_t& at(std::int64_t ni, std::int64_t y, std::int64_t x) {
    return v[static_cast<std::size_t>((ni * h + y) * w + x)];
  }
  std::uint8_t at(std::int64_t ni, std::int64_t y, std::int64_t x) const {
    return v[static_cast<std::size_t>((ni * h + y) * w + x)];
  }
};

// SplitMix64. Hand-rolled so that every stochastic choice in the project is a pure,
// platform-independent function of its seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  std::int64_t range(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool coin() { return (next_u64() & 1ull) != 0; }

  double normal() {
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derives an independent stream; used to make per-sample / per-entry draws order-free.
  Rng fork(std::uint64_t stream) const {
    Rng r(state_ ^ (0x9e3779b97f4a7c15ull * (stream + 0x632be59bd9b4e019ull)));
    r.next_u64();
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace stseg
