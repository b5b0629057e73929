#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <vector>

#include "stseg/tensor.hpp"

namespace stseg {

using Pair = std::array<int, 2>;   // {h, w}
using Quad = std::array<int, 4>;   // {top, bottom, left, right}

namespace detail {

template <class S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

struct ConvGeom {
  std::int64_t n, c, h, w;       // input
  std::int64_t o, kh, kw;        // filters
  std::int64_t ho, wo;           // output
  Pair stride, dilation;
  Quad pad;
};

inline std::int64_t conv_out_extent(std::int64_t in, int pad_lo, int pad_hi, std::int64_t k,
                                    int dil, int stride) {
  return (in + pad_lo + pad_hi - static_cast<std::int64_t>(dil) * (k - 1) - 1) / stride + 1;
}

// col[(c*kh+u)*kw+v][i*wo+j] = x[c][i*sh+u*dh-pt][j*sw+v*dw-pl], zero outside.
template <class S>
void im2col(const S* x, const ConvGeom& g, S* col) {
  const std::int64_t hw = g.h * g.w, howo = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t u = 0; u < g.kh; ++u)
      for (std::int64_t v = 0; v < g.kw; ++v) {
        S* row = col + ((c * g.kh + u) * g.kw + v) * howo;
        const S* plane = x + c * hw;
        for (std::int64_t i = 0; i < g.ho; ++i) {
          const std::int64_t y = i * g.stride[0] + u * g.dilation[0] - g.pad[0];
          if (y < 0 || y >= g.h) {
            for (std::int64_t j = 0; j < g.wo; ++j) row[i * g.wo + j] = S(0);
            continue;
          }
          for (std::int64_t j = 0; j < g.wo; ++j) {
            const std::int64_t xx = j * g.stride[1] + v * g.dilation[1] - g.pad[2];
            row[i * g.wo + j] = (xx >= 0 && xx < g.w) ? plane[y * g.w + xx] : S(0);
          }
        }
      }
}

// Adjoint of im2col: scatter-add columns back into the input layout.
template <class S>
void col2im_add(const S* col, const ConvGeom& g, S* x) {
  const std::int64_t hw = g.h * g.w, howo = g.ho * g.wo;
  for (std::int64_t c = 0; c < g.c; ++c)
    for (std::int64_t u = 0; u < g.kh; ++u)
      for (std::int64_t v = 0; v < g.kw; ++v) {
        const S* row = col + ((c * g.kh + u) * g.kw + v) * howo;
        S* plane = x + c * hw;
        for (std::int64_t i = 0; i < g.ho; ++i) {
          const std::int64_t y = i * g.stride[0] + u * g.dilation[0] - g.pad[0];
          if (y < 0 || y >= g.h) continue;
          for (std::int64_t j = 0; j < g.wo; ++j) {
            const std::int64_t xx = j * g.stride[1] + v * g.dilation[1] - g.pad[2];
            if (xx >= 0 && xx < g.w) plane[y * g.w + xx] += row[i * g.wo + j];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation over [N,C,H,W] with weight [O,C,Kh,Kw] and optional bias [O].
// Padding is (top, bottom, left, right) so even kernels can preserve extent.
template <class S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 Pair stride = {1, 1}, Quad padding = {0, 0, 0, 0}, Pair dilation = {1, 1}) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv2d: need input[N,C,H,W] and weight[O,C,Kh,Kw]");
  if (input.dim(1) != weight.dim(1))
    throw ShapeError("conv2d: input channels " + std::to_string(input.dim(1)) +
                     " != weight channels " + std::to_string(weight.dim(1)));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0)))
    throw ShapeError("conv2d: bias must be [O]");
  if (stride[0] < 1 || stride[1] < 1 || dilation[0] < 1 || dilation[1] < 1)
    throw ShapeError("conv2d: stride and dilation must be >= 1");

  detail::ConvGeom g;
  g.n = input.dim(0);
  g.c = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.o = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.pad = padding;
  g.dilation = dilation;
  g.ho = detail::conv_out_extent(g.h, padding[0], padding[1], g.kh, dilation[0], stride[0]);
  g.wo = detail::conv_out_extent(g.w, padding[2], padding[3], g.kw, dilation[1], stride[1]);
  if (g.ho < 1 || g.wo < 1)
    throw ShapeError("conv2d: padded extent smaller than dilated kernel (" +
                     shape_str(input.shape()) + " with " + shape_str(weight.shape()) + ")");

  const std::int64_t k = g.c * g.kh * g.kw, howo = g.ho * g.wo;
  std::vector<S> out(static_cast<std::size_t>(g.n * g.o * howo));
  {
    std::vector<S> col(static_cast<std::size_t>(k * howo));
    detail::ConstMatMap<S> wmat(weight.data().data(), g.o, k);
    for (std::int64_t n = 0; n < g.n; ++n) {
      detail::im2col(input.data().data() + n * g.c * g.h * g.w, g, col.data());
      detail::ConstMatMap<S> cmat(col.data(), k, howo);
      detail::MatMap<S> omat(out.data() + n * g.o * howo, g.o, howo);
      omat.noalias() = wmat * cmat;
      if (bias.defined()) {
        auto bv = bias.data();
        for (std::int64_t o = 0; o < g.o; ++o) {
          S* row = out.data() + (n * g.o + o) * howo;
          for (std::int64_t i = 0; i < howo; ++i) row[i] += bv[o];
        }
      }
    }
  }

  auto px = input.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<S>> parents = {px, pw};
  if (pb) parents.push_back(pb);
  return make_op<S>(
      "conv2d", {g.n, g.o, g.ho, g.wo}, std::move(out), std::move(parents),
      [px, pw, pb, g, k, howo](Node<S>& self) {
        std::vector<S> col(static_cast<std::size_t>(k * howo));
        if (pw->requires_grad) {
          pw->ensure_grad();
          detail::MatMap<S> gw(pw->grad.data(), g.o, k);
          for (std::int64_t n = 0; n < g.n; ++n) {
            detail::im2col(px->value.data() + n * g.c * g.h * g.w, g, col.data());
            detail::ConstMatMap<S> cmat(col.data(), k, howo);
            detail::ConstMatMap<S> go(self.grad.data() + n * g.o * howo, g.o, howo);
            gw.noalias() += go * cmat.transpose();
          }
        }
        if (px->requires_grad) {
          px->ensure_grad();
          detail::ConstMatMap<S> wmat(pw->value.data(), g.o, k);
          for (std::int64_t n = 0; n < g.n; ++n) {
            detail::ConstMatMap<S> go(self.grad.data() + n * g.o * howo, g.o, howo);
            detail::MatMap<S> cmat(col.data(), k, howo);
            cmat.noalias() = wmat.transpose() * go;
            detail::col2im_add(col.data(), g, px->grad.data() + n * g.c * g.h * g.w);
          }
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (std::int64_t n = 0; n < g.n; ++n)
            for (std::int64_t o = 0; o < g.o; ++o) {
              S acc = 0;
              const S* row = self.grad.data() + (n * g.o + o) * howo;
              for (std::int64_t i = 0; i < howo; ++i) acc += row[i];
              pb->grad[o] += acc;
            }
        }
      });
}

// Transposed convolution over [N,C,H,W] with weight [C,O,Kh,Kw]; H' = (H-1)*sh + Kh.
// Adjoint of conv2d with the same weight buffer, zero padding, matching stride.
template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                           Pair stride = {1, 1}) {
  if (input.rank() != 4 || weight.rank() != 4)
    throw ShapeError("conv_transpose2d: need input[N,C,H,W] and weight[C,O,Kh,Kw]");
  if (input.dim(1) != weight.dim(0))
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(input.dim(1)) +
                     " != weight channels " + std::to_string(weight.dim(0)));
  if (stride[0] < 1 || stride[1] < 1) throw ShapeError("conv_transpose2d: stride must be >= 1");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(1)))
    throw ShapeError("conv_transpose2d: bias must be [O]");

  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::int64_t o = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  const std::int64_t ho = (h - 1) * stride[0] + kh, wo = (w - 1) * stride[1] + kw;
  const std::int64_t k = o * kh * kw, hw = h * w;

  // The scatter target looks like the *input* of a virtual conv2d.
  detail::ConvGeom g;
  g.n = n;
  g.c = o;
  g.h = ho;
  g.w = wo;
  g.o = c;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  g.pad = {0, 0, 0, 0};
  g.dilation = {1, 1};
  g.ho = h;
  g.wo = w;

  std::vector<S> out(static_cast<std::size_t>(n * o * ho * wo), S(0));
  {
    std::vector<S> col(static_cast<std::size_t>(k * hw));
    detail::ConstMatMap<S> wmat(weight.data().data(), c, k);
    for (std::int64_t ni = 0; ni < n; ++ni) {
      detail::ConstMatMap<S> xmat(input.data().data() + ni * c * hw, c, hw);
      detail::MatMap<S> cmat(col.data(), k, hw);
      cmat.noalias() = wmat.transpose() * xmat;
      detail::col2im_add(col.data(), g, out.data() + ni * o * ho * wo);
    }
    if (bias.defined()) {
      auto bv = bias.data();
      for (std::int64_t ni = 0; ni < n; ++ni)
        for (std::int64_t oi = 0; oi < o; ++oi) {
          S* plane = out.data() + (ni * o + oi) * ho * wo;
          for (std::int64_t i = 0; i < ho * wo; ++i) plane[i] += bv[oi];
        }
    }
  }

  auto px = input.node(), pw = weight.node();
  auto pb = bias.defined() ? bias.node() : nullptr;
  std::vector<NodePtr<S>> parents = {px, pw};
  if (pb) parents.push_back(pb);
  return make_op<S>(
      "conv_transpose2d", {n, o, ho, wo}, std::move(out), std::move(parents),
      [px, pw, pb, g, n, c, o, k, hw, ho, wo](Node<S>& self) {
        std::vector<S> col(static_cast<std::size_t>(k * hw));
        if (px->requires_grad || pw->requires_grad) {
          for (std::int64_t ni = 0; ni < n; ++ni) {
            detail::im2col(self.grad.data() + ni * o * ho * wo, g, col.data());
            detail::ConstMatMap<S> cmat(col.data(), k, hw);
            if (px->requires_grad) {
              px->ensure_grad();
              detail::ConstMatMap<S> wmat(pw->value.data(), c, k);
              detail::MatMap<S> gx(px->grad.data() + ni * c * hw, c, hw);
              gx.noalias() += wmat * cmat;
            }
            if (pw->requires_grad) {
              pw->ensure_grad();
              detail::ConstMatMap<S> xmat(px->value.data() + ni * c * hw, c, hw);
              detail::MatMap<S> gw(pw->grad.data(), c, k);
              gw.noalias() += xmat * cmat.transpose();
            }
          }
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (std::int64_t ni = 0; ni < n; ++ni)
            for (std::int64_t oi = 0; oi < o; ++oi) {
              S acc = 0;
              const S* plane = self.grad.data() + (ni * o + oi) * ho * wo;
              for (std::int64_t i = 0; i < ho * wo; ++i) acc += plane[i];
              pb->grad[oi] += acc;
            }
        }
      });
}

// 2x2 window, stride 2. Backward routes to the first (row-major) maximal element.
template <class S>
Tensor<S> maxpool2d(const Tensor<S>& input) {
  if (input.rank() != 4) throw ShapeError("maxpool2d: need [N,C,H,W]");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_str(input.shape()));
  const std::int64_t ho = h / 2, wo = w / 2;
  std::vector<S> out(static_cast<std::size_t>(n * c * ho * wo));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out.size());
  auto xv = input.data();
  std::int64_t idx = 0;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const S* plane = xv.data() + p * h * w;
    for (std::int64_t i = 0; i < ho; ++i)
      for (std::int64_t j = 0; j < wo; ++j, ++idx) {
        const std::int64_t base = (2 * i) * w + 2 * j;
        std::int64_t best = base;
        S bv = plane[base];
        const std::int64_t cand[3] = {base + 1, base + w, base + w + 1};
        for (std::int64_t cd : cand)
          if (plane[cd] > bv) {
            bv = plane[cd];
            best = cd;
          }
        out[static_cast<std::size_t>(idx)] = bv;
        (*argmax)[static_cast<std::size_t>(idx)] = p * h * w + best;
      }
  }
  auto px = input.node();
  return make_op<S>("maxpool2d", {n, c, ho, wo}, std::move(out), {px},
                    [px, argmax](Node<S>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t i = 0; i < self.grad.size(); ++i)
                        px->grad[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
                    });
}

// Running statistics for one BatchNorm instance. Buffers, not parameters.
template <class S>
struct BatchNormState {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  static BatchNormState make(std::int64_t channels) {
    BatchNormState st;
    st.running_mean = Tensor<S>::zeros({channels});
    st.running_var = Tensor<S>::full({channels}, S(1));
    return st;
  }
};

template <class S>
Tensor<S> batchnorm2d(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                      BatchNormState<S>& state, bool training, S momentum = S(0.1),
                      S eps = S(1e-5)) {
  if (input.rank() != 4) throw ShapeError("batchnorm2d: need [N,C,H,W]");
  const std::int64_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
    throw ShapeError("batchnorm2d: gamma/beta must be [C]");
  const std::int64_t m = n * h * w;
  if (training && m < 2)
    throw ShapeError("batchnorm2d: degenerate batch, need N*H*W >= 2 in train mode");

  auto xv = input.data();
  auto gam = gamma.data(), bet = beta.data();
  std::vector<S> mean(static_cast<std::size_t>(c)), invstd(static_cast<std::size_t>(c));

  if (training) {
    for (std::int64_t ci = 0; ci < c; ++ci) {
      double acc = 0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const S* plane = xv.data() + (ni * c + ci) * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) acc += plane[i];
      }
      const double mu = acc / static_cast<double>(m);
      double var = 0;
      for (std::int64_t ni = 0; ni < n; ++ni) {
        const S* plane = xv.data() + (ni * c + ci) * h * w;
        for (std::int64_t i = 0; i < h * w; ++i) {
          const double d = plane[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      mean[ci] = static_cast<S>(mu);
      invstd[ci] = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      auto rm = state.running_mean.data();
      auto rv = state.running_var.data();
      const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
      rm[ci] = static_cast<S>((1 - momentum) * rm[ci] + momentum * static_cast<S>(mu));
      rv[ci] = static_cast<S>((1 - momentum) * rv[ci] + momentum * static_cast<S>(unbiased));
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::int64_t ci = 0; ci < c; ++ci) {
      mean[ci] = rm[ci];
      invstd[ci] = static_cast<S>(1.0 / std::sqrt(static_cast<double>(rv[ci]) +
                                                  static_cast<double>(eps)));
    }
  }

  std::vector<S> out(xv.size());
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t ci = 0; ci < c; ++ci) {
      const S* plane = xv.data() + (ni * c + ci) * h * w;
      S* op = out.data() + (ni * c + ci) * h * w;
      const S mu = mean[ci], is = invstd[ci], ga = gam[ci], be = bet[ci];
      for (std::int64_t i = 0; i < h * w; ++i) op[i] = (plane[i] - mu) * is * ga + be;
    }

  auto px = input.node(), pg = gamma.node(), pb = beta.node();
  return make_op<S>(
      "batchnorm2d", input.shape(), std::move(out), {px, pg, pb},
      [px, pg, pb, mean, invstd, n, c, h, w, m, training](Node<S>& self) {
        const std::int64_t hw = h * w;
        for (std::int64_t ci = 0; ci < c; ++ci) {
          const S mu = mean[ci], is = invstd[ci], ga = pg->value[ci];
          // per-channel reductions
          double sum_g = 0, sum_gx = 0;
          for (std::int64_t ni = 0; ni < n; ++ni) {
            const S* gp = self.grad.data() + (ni * c + ci) * hw;
            const S* xp = px->value.data() + (ni * c + ci) * hw;
            for (std::int64_t i = 0; i < hw; ++i) {
              sum_g += gp[i];
              sum_gx += gp[i] * ((xp[i] - mu) * is);
            }
          }
          if (pb->requires_grad) {
            pb->ensure_grad();
            pb->grad[ci] += static_cast<S>(sum_g);
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            pg->grad[ci] += static_cast<S>(sum_gx);
          }
          if (px->requires_grad) {
            px->ensure_grad();
            if (training) {
              const S mg = static_cast<S>(sum_g / static_cast<double>(m));
              const S mgx = static_cast<S>(sum_gx / static_cast<double>(m));
              for (std::int64_t ni = 0; ni < n; ++ni) {
                const S* gp = self.grad.data() + (ni * c + ci) * hw;
                const S* xp = px->value.data() + (ni * c + ci) * hw;
                S* dp = px->grad.data() + (ni * c + ci) * hw;
                for (std::int64_t i = 0; i < hw; ++i) {
                  const S xhat = (xp[i] - mu) * is;
                  dp[i] += ga * is * (gp[i] - mg - xhat * mgx);
                }
              }
            } else {
              for (std::int64_t ni = 0; ni < n; ++ni) {
                const S* gp = self.grad.data() + (ni * c + ci) * hw;
                S* dp = px->grad.data() + (ni * c + ci) * hw;
                for (std::int64_t i = 0; i < hw; ++i) dp[i] += gp[i] * ga * is;
              }
            }
          }
        }
      });
}

// Mean negative log-softmax over pixels whose label is not ignore_index.
// All pixels ignored -> a zero loss whose backward contributes nothing.
template <class S>
Tensor<S> softmax_cross_entropy_ignore(const Tensor<S>& logits, const LabelMap& labels,
                                       std::uint8_t ignore_index = kVoidLabel) {
  if (logits.rank() != 4) throw ShapeError("cross_entropy: logits must be [N,C,H,W]");
  const std::int64_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (labels.n != n || labels.h != h || labels.w != w)
    throw ShapeError("cross_entropy: label map " + std::to_string(labels.n) + "x" +
                     std::to_string(labels.h) + "x" + std::to_string(labels.w) +
                     " does not match logits " + shape_str(logits.shape()));
  for (std::uint8_t lv : labels.v)
    if (lv != ignore_index && lv >= c)
      throw ShapeError("cross_entropy: label value " + std::to_string(int(lv)) +
                       " outside [0," + std::to_string(c) + ")");

  auto zv = logits.data();
  const std::int64_t chw = c * h * w, hw = h * w;
  auto probs = std::make_shared<std::vector<S>>(zv.size());
  std::int64_t count = 0;
  double total = 0;
  for (std::int64_t ni = 0; ni < n; ++ni)
    for (std::int64_t p = 0; p < hw; ++p) {
      const std::uint8_t lab = labels.v[static_cast<std::size_t>(ni * hw + p)];
      const S* z = zv.data() + ni * chw + p;
      S* pr = probs->data() + ni * chw + p;
      S mx = z[0];
      for (std::int64_t ci = 1; ci < c; ++ci) mx = std::max(mx, z[ci * hw]);
      double denom = 0;
      for (std::int64_t ci = 0; ci < c; ++ci) denom += std::exp(static_cast<double>(z[ci * hw] - mx));
      for (std::int64_t ci = 0; ci < c; ++ci)
        pr[ci * hw] = static_cast<S>(std::exp(static_cast<double>(z[ci * hw] - mx)) / denom);
      if (lab == ignore_index) continue;
      ++count;
      total += std::log(denom) - static_cast<double>(z[lab * hw] - mx);
    }

  const S loss = count ? static_cast<S>(total / static_cast<double>(count)) : S(0);
  auto px = logits.node();
  auto labv = std::make_shared<std::vector<std::uint8_t>>(labels.v);
  return make_op<S>("softmax_cross_entropy", {1}, {loss}, {px},
                    [px, probs, labv, n, c, hw, chw, count, ignore_index](Node<S>& self) {
                      if (!px->requires_grad || count == 0) return;
                      px->ensure_grad();
                      const S g = self.grad[0] / static_cast<S>(count);
                      for (std::int64_t ni = 0; ni < n; ++ni)
                        for (std::int64_t p = 0; p < hw; ++p) {
                          const std::uint8_t lab = (*labv)[static_cast<std::size_t>(ni * hw + p)];
                          if (lab == ignore_index) continue;
                          const S* pr = probs->data() + ni * chw + p;
                          S* dz = px->grad.data() + ni * chw + p;
                          for (std::int64_t ci = 0; ci < c; ++ci) {
                            S d = pr[ci * hw];
                            if (ci == lab) d -= S(1);
                            dz[ci * hw] += g * d;
                          }
                        }
                    });
}

}  // namespace stseg
