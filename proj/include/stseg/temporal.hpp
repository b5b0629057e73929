#pragma once

#include <string>
#include <utility>
#include <vector>

#include "stseg/layers.hpp"

namespace stseg {

enum class TemporalKind { convlstm, pointwise_tn, tn_2dhw };

inline std::string to_string(TemporalKind k) {
  switch (k) {
    case TemporalKind::convlstm: return "convlstm";
    case TemporalKind::pointwise_tn: return "pointwise_tn";
    case TemporalKind::tn_2dhw: return "tn_2dhw";
  }
  return "?";
}

inline TemporalKind temporal_kind_from_string(const std::string& s) {
  if (s == "convlstm") return TemporalKind::convlstm;
  if (s == "pointwise_tn" || s == "pointwise") return TemporalKind::pointwise_tn;
  if (s == "tn_2dhw" || s == "2dhw") return TemporalKind::tn_2dhw;
  throw ConfigError("unknown temporal kind '" + s + "'");
}

struct TemporalUnitConfig {
  TemporalKind kind = TemporalKind::pointwise_tn;
  int t = 4;
  int c = 0;
  int k = 1;         // 3 for convlstm, 2 for tn_2dhw, 1 (inert) for pointwise
  int dilation = 1;  // TN lineage; inert for pointwise
  bool bias = true;

  static TemporalUnitConfig make(TemporalKind kind, int t, int c) {
    TemporalUnitConfig cfg;
    cfg.kind = kind;
    cfg.t = t;
    cfg.c = c;
    cfg.k = kind == TemporalKind::convlstm ? 3 : (kind == TemporalKind::tn_2dhw ? 2 : 1);
    return cfg;
  }

  void validate() const {
    if (t < 1 || c < 1) throw ConfigError("temporal unit needs t >= 1 and c >= 1");
    if (k < 1 || dilation < 1) throw ConfigError("temporal unit needs k >= 1, dilation >= 1");
    if (kind == TemporalKind::convlstm && k % 2 == 0)
      throw ConfigError("convlstm kernel must be odd for same-size padding");
  }
};

struct TemporalParamCount {
  std::int64_t implemented_weights = 0;  // learnable weights, biases excluded
  std::int64_t implemented_biases = 0;
  std::int64_t paper_nominal = 0;
};

inline TemporalParamCount temporal_param_count(const TemporalUnitConfig& cfg) {
  TemporalParamCount pc;
  const std::int64_t t = cfg.t, c = cfg.c, k = cfg.k;
  switch (cfg.kind) {
    case TemporalKind::convlstm:
      pc.implemented_weights = 4 * c * (2 * c) * k * k;  // gates over [x, h]
      pc.implemented_biases = cfg.bias ? 4 * c : 0;
      pc.paper_nominal = 4 * c * c * k * k;
      break;
    case TemporalKind::pointwise_tn:
      pc.implemented_weights = 2 * t * t;  // two mixing layers
      pc.implemented_biases = cfg.bias ? 2 * t : 0;
      pc.paper_nominal = t * t;  // per layer
      break;
    case TemporalKind::tn_2dhw:
      pc.implemented_weights = 2 * (t * c) * (t * c) * k * k;
      pc.implemented_biases = cfg.bias ? 2 * t * c : 0;
      pc.paper_nominal = t * t * c * c * k * k;  // per layer
      break;
  }
  return pc;
}

// One ConvLSTM step: gates from a single convolution over channel-concat [x, h].
template <class S>
std::pair<Tensor<S>, Tensor<S>> convlstm_cell(const Tensor<S>& x, const Tensor<S>& h,
                                              const Tensor<S>& c, const Tensor<S>& gate_w,
                                              const Tensor<S>& gate_b) {
  if (x.shape() != h.shape() || x.shape() != c.shape())
    throw ShapeError("convlstm_cell: x, h, c must share shape, got " + shape_str(x.shape()) +
                     ", " + shape_str(h.shape()) + ", " + shape_str(c.shape()));
  const std::int64_t ch = x.dim(1);
  if (gate_w.dim(0) != 4 * ch || gate_w.dim(1) != 2 * ch)
    throw ShapeError("convlstm_cell: gate weight must be [4C,2C,K,K] for C=" +
                     std::to_string(ch) + ", got " + shape_str(gate_w.shape()));
  const int k = static_cast<int>(gate_w.dim(2));
  const int p = (k - 1) / 2;
  Tensor<S> z = conv2d(concat<S>({x, h}, 1), gate_w, gate_b, {1, 1}, {p, p, p, p}, {1, 1});
  Tensor<S> i = sigmoid(narrow(z, 1, 0, ch));
  Tensor<S> f = sigmoid(narrow(z, 1, ch, ch));
  Tensor<S> g = tanh_op(narrow(z, 1, 2 * ch, ch));
  Tensor<S> o = sigmoid(narrow(z, 1, 3 * ch, ch));
  Tensor<S> c_next = add(mul(f, c), mul(i, g));
  Tensor<S> h_next = mul(o, tanh_op(c_next));
  return {h_next, c_next};
}

// Chronological scan from zero state; output t is the hidden state h_t.
template <class S>
Tensor<S> convlstm_sequence(const Tensor<S>& seq, const Tensor<S>& gate_w,
                            const Tensor<S>& gate_b) {
  if (seq.rank() != 4) throw ShapeError("convlstm_sequence: need [T,C,H,W]");
  const std::int64_t t = seq.dim(0);
  Tensor<S> h = Tensor<S>::zeros({1, seq.dim(1), seq.dim(2), seq.dim(3)});
  Tensor<S> c = h.detach();
  std::vector<Tensor<S>> outs;
  outs.reserve(static_cast<std::size_t>(t));
  for (std::int64_t i = 0; i < t; ++i) {
    auto [h2, c2] = convlstm_cell(narrow(seq, 0, i, 1), h, c, gate_w, gate_b);
    h = h2;
    c = c2;
    outs.push_back(h);
  }
  return outs.size() == 1 ? outs[0] : concat<S>(outs, 0);
}

// Two T x T mixing layers applied identically at every CHW position, plus the
// residual connection. Weight cost is independent of the feature map shape.
template <class S>
Tensor<S> pointwise_tn(const Tensor<S>& seq, const Tensor<S>& w1, const Tensor<S>& b1,
                       const Tensor<S>& w2, const Tensor<S>& b2) {
  if (seq.rank() != 4) throw ShapeError("pointwise_tn: need [T,C,H,W]");
  const std::int64_t t = seq.dim(0);
  if (w1.rank() != 2 || w1.dim(0) != t || w1.dim(1) != t || w2.rank() != 2 || w2.dim(0) != t ||
      w2.dim(1) != t)
    throw ShapeError("pointwise_tn: weights must be [T,T] with T=" + std::to_string(t));
  Tensor<S> flat = reshape(seq, {t, seq.numel() / t});
  Tensor<S> y = matmul(w1, flat);
  if (b1.defined()) y = add_row_bias(y, b1);
  y = relu(y);
  y = matmul(w2, y);
  if (b2.defined()) y = add_row_bias(y, b2);
  return reshape(add(flat, y), seq.shape());
}

// Folds time into channels (TC x H x W) and mixes with two even-kernel convs;
// padding (0, d*(k-1), 0, d*(k-1)) keeps H x W.
template <class S>
Tensor<S> tn_2dhw(const Tensor<S>& seq, const Tensor<S>& w1, const Tensor<S>& b1,
                  const Tensor<S>& w2, const Tensor<S>& b2, int k, int dilation = 1) {
  if (seq.rank() != 4) throw ShapeError("tn_2dhw: need [T,C,H,W]");
  const std::int64_t tc = seq.dim(0) * seq.dim(1);
  if (w1.dim(0) != tc || w1.dim(1) != tc || w2.dim(0) != tc || w2.dim(1) != tc)
    throw ShapeError("tn_2dhw: weights must be [TC,TC,K,K] with TC=" + std::to_string(tc));
  const int ext = dilation * (k - 1);
  const Quad pad = {0, ext, 0, ext};
  Tensor<S> folded = reshape(seq, {1, tc, seq.dim(2), seq.dim(3)});
  Tensor<S> y = conv2d(folded, w1, b1, {1, 1}, pad, {dilation, dilation});
  y = relu(y);
  y = conv2d(y, w2, b2, {1, 1}, pad, {dilation, dilation});
  return reshape(add(folded, y), seq.shape());
}

// One temporal unit with its weights; forward maps [T,C,H,W] -> [T,C,H,W].
template <class S>
struct TemporalUnit {
  TemporalUnitConfig cfg;
  Tensor<S> w1, b1, w2, b2;  // convlstm uses w1/b1 as the gate convolution

  static TemporalUnit make(const TemporalUnitConfig& cfg, ParamRegistry<S>& reg,
                           const std::string& prefix) {
    cfg.validate();
    TemporalUnit u;
    u.cfg = cfg;
    const int t = cfg.t, c = cfg.c, k = cfg.k;
    switch (cfg.kind) {
      case TemporalKind::convlstm:
        u.w1 = reg.add(prefix + ".gates.w", Tensor<S>::zeros({4 * c, 2 * c, k, k}), true,
                       InitKind::kaiming_uniform, static_cast<std::int64_t>(2 * c) * k * k);
        if (cfg.bias)
          u.b1 = reg.add(prefix + ".gates.b", Tensor<S>::zeros({4 * c}), true,
                         InitKind::lstm_gate_bias);
        break;
      case TemporalKind::pointwise_tn:
        u.w1 = reg.add(prefix + ".w1", Tensor<S>::zeros({t, t}), true,
                       InitKind::kaiming_uniform, t);
        u.w2 = reg.add(prefix + ".w2", Tensor<S>::zeros({t, t}), true,
                       InitKind::kaiming_uniform, t);
        if (cfg.bias) {
          u.b1 = reg.add(prefix + ".b1", Tensor<S>::zeros({t}), true, InitKind::zeros);
          u.b2 = reg.add(prefix + ".b2", Tensor<S>::zeros({t}), true, InitKind::zeros);
        }
        break;
      case TemporalKind::tn_2dhw: {
        const std::int64_t tc = static_cast<std::int64_t>(t) * c;
        u.w1 = reg.add(prefix + ".w1", Tensor<S>::zeros({tc, tc, k, k}), true,
                       InitKind::kaiming_uniform, tc * k * k);
        u.w2 = reg.add(prefix + ".w2", Tensor<S>::zeros({tc, tc, k, k}), true,
                       InitKind::kaiming_uniform, tc * k * k);
        if (cfg.bias) {
          u.b1 = reg.add(prefix + ".b1", Tensor<S>::zeros({tc}), true, InitKind::zeros);
          u.b2 = reg.add(prefix + ".b2", Tensor<S>::zeros({tc}), true, InitKind::zeros);
        }
        break;
      }
    }
    return u;
  }

  Tensor<S> forward(const Tensor<S>& seq) const {
    if (seq.rank() != 4 || seq.dim(0) != cfg.t || seq.dim(1) != cfg.c)
      throw ShapeError("temporal unit configured for T=" + std::to_string(cfg.t) +
                       ", C=" + std::to_string(cfg.c) + " got " + shape_str(seq.shape()));
    switch (cfg.kind) {
      case TemporalKind::convlstm: return convlstm_sequence(seq, w1, b1);
      case TemporalKind::pointwise_tn: return pointwise_tn(seq, w1, b1, w2, b2);
      case TemporalKind::tn_2dhw: return tn_2dhw(seq, w1, b1, w2, b2, cfg.k, cfg.dilation);
    }
    throw ConfigError("unreachable temporal kind");
  }

  TemporalParamCount param_count() const { return temporal_param_count(cfg); }
};

template <class S>
Tensor<S> temporal_forward(const TemporalUnit<S>& unit, const Tensor<S>& seq) {
  return unit.forward(seq);
}

}  // namespace stseg
