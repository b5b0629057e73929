#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stseg/common.hpp"
#include "stseg/tensor.hpp"

namespace stseg {

struct GradCheckResult {
  double max_rel_err = 0;
  std::int64_t coords_checked = 0;
};

// Central finite differences against the autograd gradient for a scalar-valued
// function of the given leaf tensors. Large tensors are subsampled, but at least
// min_coords coordinates per input are probed.
template <class S>
GradCheckResult grad_check(const std::function<Tensor<S>(void)>& fn,
                           std::vector<Tensor<S>> inputs, S eps,
                           std::int64_t min_coords = 64, std::uint64_t seed = 0x5eedc0de,
                           double denom_floor = 1e-3) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<S> loss = fn();
  if (loss.numel() != 1) throw ShapeError("grad_check: function under test must be scalar");
  backward(loss);

  std::vector<std::vector<S>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) {
    auto g = in.grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  GradCheckResult res;
  Rng rng(seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    const std::int64_t n = in.numel();
    std::vector<std::int64_t> coords;
    if (n <= min_coords) {
      coords.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (std::int64_t i = 0; i < min_coords; ++i)
        coords.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
    }
    auto xv = in.data();
    for (std::int64_t ci : coords) {
      const S orig = xv[static_cast<std::size_t>(ci)];
      double fp, fm;
      {
        NoGradGuard ng;
        xv[static_cast<std::size_t>(ci)] = orig + eps;
        fp = static_cast<double>(fn().item());
        xv[static_cast<std::size_t>(ci)] = orig - eps;
        fm = static_cast<double>(fn().item());
        xv[static_cast<std::size_t>(ci)] = orig;
      }
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check: non-finite value from probed function");
      const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[k][static_cast<std::size_t>(ci)]);
      const double denom = std::max({std::abs(a), std::abs(numeric), denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.coords_checked++;
    }
  }
  return res;
}

inline double default_gradcheck_eps_f64() { return 1e-4; }
inline float default_gradcheck_eps_f32() { return 1e-2f; }

}  // namespace stseg
