// Independent reference implementations used only by tests. Each one is a
// direct transcription of the operation's definition, with no shared code
// paths into the library implementations they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "stseg/ops.hpp"

namespace oracles {

using stseg::Pair;
using stseg::Quad;

// Six nested loops, exactly the cross-correlation definition.
template <class S>
std::vector<S> naive_conv2d(const std::vector<S>& x, std::int64_t n, std::int64_t c,
                            std::int64_t h, std::int64_t w, const std::vector<S>& wt,
                            std::int64_t o, std::int64_t kh, std::int64_t kw,
                            const std::vector<S>& bias, Pair stride, Quad pad, Pair dil,
                            std::int64_t& ho_out, std::int64_t& wo_out) {
  const std::int64_t ho = (h + pad[0] + pad[1] - dil[0] * (kh - 1) - 1) / stride[0] + 1;
  const std::int64_t wo = (w + pad[2] + pad[3] - dil[1] * (kw - 1) - 1) / stride[1] + 1;
  ho_out = ho;
  wo_out = wo;
  std::vector<S> out(static_cast<std::size_t>(n * o * ho * wo), S(0));
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t oi = 0; oi < o; ++oi)
      for (std::int64_t i = 0; i < ho; ++i)
        for (std::int64_t j = 0; j < wo; ++j) {
          S acc = bias.empty() ? S(0) : bias[static_cast<std::size_t>(oi)];
          for (std::int64_t ci = 0; ci < c; ++ci)
            for (std::int64_t u = 0; u < kh; ++u)
              for (std::int64_t v = 0; v < kw; ++v) {
                const std::int64_t y = i * stride[0] + u * dil[0] - pad[0];
                const std::int64_t xx = j * stride[1] + v * dil[1] - pad[2];
                if (y < 0 || y >= h || xx < 0 || xx >= w) continue;
                acc += x[static_cast<std::size_t>(((ni * c + ci) * h + y) * w + xx)] *
                       wt[static_cast<std::size_t>(((oi * c + ci) * kh + u) * kw + v)];
              }
          out[static_cast<std::size_t>(((ni * o + oi) * ho + i) * wo + j)] = acc;
        }
  return out;
}

// Direct scatter-accumulate over input positions.
template <class S>
std::vector<S> naive_conv_transpose2d(const std::vector<S>& x, std::int64_t n, std::int64_t c,
                                      std::int64_t h, std::int64_t w, const std::vector<S>& wt,
                                      std::int64_t o, std::int64_t kh, std::int64_t kw,
                                      const std::vector<S>& bias, Pair stride,
                                      std::int64_t& ho_out, std::int64_t& wo_out) {
  const std::int64_t ho = (h - 1) * stride[0] + kh, wo = (w - 1) * stride[1] + kw;
  ho_out = ho;
  wo_out = wo;
  std::vector<S> out(static_cast<std::size_t>(n * o * ho * wo), S(0));
  for (std::int64_t ni = 0; ni < n; ++ni) {
    for (std::int64_t ci = 0; ci < c; ++ci)
      for (std::int64_t i = 0; i < h; ++i)
        for (std::int64_t j = 0; j < w; ++j) {
          const S xv = x[static_cast<std::size_t>(((ni * c + ci) * h + i) * w + j)];
          for (std::int64_t oi = 0; oi < o; ++oi)
            for (std::int64_t u = 0; u < kh; ++u)
              for (std::int64_t v = 0; v < kw; ++v)
                out[static_cast<std::size_t>(((ni * o + oi) * ho + i * stride[0] + u) * wo +
                                             j * stride[1] + v)] +=
                    xv * wt[static_cast<std::size_t>(((ci * o + oi) * kh + u) * kw + v)];
        }
    if (!bias.empty())
      for (std::int64_t oi = 0; oi < o; ++oi)
        for (std::int64_t p = 0; p < ho * wo; ++p)
          out[static_cast<std::size_t>((ni * o + oi) * ho * wo + p)] +=
              bias[static_cast<std::size_t>(oi)];
  }
  return out;
}

// Windowed max with a 2x2 kernel and stride 2.
template <class S>
std::vector<S> naive_maxpool2d(const std::vector<S>& x, std::int64_t planes, std::int64_t h,
                               std::int64_t w) {
  const std::int64_t ho = h / 2, wo = w / 2;
  std::vector<S> out(static_cast<std::size_t>(planes * ho * wo));
  for (std::int64_t p = 0; p < planes; ++p)
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j) {
        S best = x[static_cast<std::size_t>(p * h * w + (2 * i) * w + 2 * j)];
        for (int du = 0; du < 2; ++du)
          for (int dv = 0; dv < 2; ++dv)
            best = std::max(best, x[static_cast<std::size_t>(p * h * w + (2 * i + du) * w +
                                                             (2 * j + dv))]);
        out[static_cast<std::size_t>((p * ho + i) * wo + j)] = best;
      }
  return out;
}

// Scalar Adam with classic L2 coupling, transcribed from its definition.
struct ScalarAdamOracle {
  double m = 0, v = 0;
  std::int64_t t = 0;
  double step(double w, double g, double lr, double beta1, double beta2, double eps,
              double weight_decay) {
    ++t;
    g += weight_decay * w;
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g * g;
    const double mhat = m / (1 - std::pow(beta1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(beta2, static_cast<double>(t)));
    return w - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

// mIoU from a confusion matrix, computed by the textbook formula.
inline double miou_from_confusion(const std::vector<std::int64_t>& cm, int c) {
  double sum = 0;
  int n = 0;
  for (int k = 0; k < c; ++k) {
    std::int64_t tp = cm[static_cast<std::size_t>(k * c + k)], fp = 0, fn = 0;
    for (int o = 0; o < c; ++o)
      if (o != k) {
        fp += cm[static_cast<std::size_t>(o * c + k)];
        fn += cm[static_cast<std::size_t>(k * c + o)];
      }
    if (tp + fp + fn > 0) {
      sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

}  // namespace oracles
