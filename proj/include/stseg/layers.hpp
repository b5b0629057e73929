#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stseg/ops.hpp"

namespace stseg {

enum class InitKind { kaiming_uniform, zeros, ones, lstm_gate_bias };

// Ordered registry of named tensors. Parameters (learnable) and buffers
// (running statistics) both live here so checkpoints capture full state.
template <class S>
struct ParamRegistry {
  struct Entry {
    std::string name;
    Tensor<S> tensor;
    bool learnable = true;
    InitKind init = InitKind::zeros;
    std::int64_t fan_in = 0;  // kaiming only
  };

  std::vector<Entry> entries;

  Tensor<S>& add(std::string name, Tensor<S> t, bool learnable, InitKind init,
                 std::int64_t fan_in = 0) {
    if (names_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    names_.insert(name);
    t.set_requires_grad(learnable);
    entries.push_back(Entry{std::move(name), std::move(t), learnable, init, fan_in});
    return entries.back().tensor;
  }

  std::vector<Tensor<S>> learnable() const {
    std::vector<Tensor<S>> out;
    for (const auto& e : entries)
      if (e.learnable) out.push_back(e.tensor);
    return out;
  }

  std::vector<std::string> learnable_names() const {
    std::vector<std::string> out;
    for (const auto& e : entries)
      if (e.learnable) out.push_back(e.name);
    return out;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries)
      if (e.learnable) n += e.tensor.numel();
    return n;
  }

  std::int64_t param_count_prefix(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& e : entries)
      if (e.learnable && e.name.rfind(prefix, 0) == 0) n += e.tensor.numel();
    return n;
  }

 private:
  std::unordered_set<std::string> names_;
};

// Re-initializes every registered tensor from its recorded init kind.
// Fully determined by (seed, registration order).
template <class S>
void init_params(ParamRegistry<S>& reg, std::uint64_t seed, double leaky_slope = 0.01) {
  Rng root(seed);
  const double gain = std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope));
  for (std::size_t i = 0; i < reg.entries.size(); ++i) {
    auto& e = reg.entries[i];
    auto data = e.tensor.data();
    switch (e.init) {
      case InitKind::zeros:
        std::fill(data.begin(), data.end(), S(0));
        break;
      case InitKind::ones:
        std::fill(data.begin(), data.end(), S(1));
        break;
      case InitKind::kaiming_uniform: {
        if (e.fan_in <= 0) throw ConfigError("kaiming init needs fan_in for '" + e.name + "'");
        Rng rng = root.fork(i);
        const double bound = gain * std::sqrt(3.0 / static_cast<double>(e.fan_in));
        for (auto& v : data) v = static_cast<S>(rng.uniform(-bound, bound));
        break;
      }
      case InitKind::lstm_gate_bias: {
        // gate order (i, f, g, o): forget bias starts at 1 so state carries
        std::fill(data.begin(), data.end(), S(0));
        const std::size_t c = data.size() / 4;
        for (std::size_t j = c; j < 2 * c; ++j) data[j] = S(1);
        break;
      }
    }
    e.tensor.zero_grad();
  }
}

template <class S>
struct Conv2dLayer {
  Tensor<S> w, b;
  Pair stride{1, 1};
  Quad pad{0, 0, 0, 0};
  Pair dil{1, 1};

  static Conv2dLayer make(int in_c, int out_c, int kh, int kw, Pair stride, Quad pad, Pair dil,
                          bool bias, ParamRegistry<S>& reg, const std::string& prefix) {
    Conv2dLayer l;
    l.stride = stride;
    l.pad = pad;
    l.dil = dil;
    l.w = reg.add(prefix + ".w", Tensor<S>::zeros({out_c, in_c, kh, kw}), true,
                  InitKind::kaiming_uniform, static_cast<std::int64_t>(in_c) * kh * kw);
    if (bias) l.b = reg.add(prefix + ".b", Tensor<S>::zeros({out_c}), true, InitKind::zeros);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad, dil); }
};

template <class S>
struct ConvTranspose2dLayer {
  Tensor<S> w, b;
  Pair stride{2, 2};

  static ConvTranspose2dLayer make(int in_c, int out_c, int k, Pair stride, bool bias,
                                   ParamRegistry<S>& reg, const std::string& prefix) {
    ConvTranspose2dLayer l;
    l.stride = stride;
    l.w = reg.add(prefix + ".w", Tensor<S>::zeros({in_c, out_c, k, k}), true,
                  InitKind::kaiming_uniform, static_cast<std::int64_t>(out_c) * k * k);
    if (bias) l.b = reg.add(prefix + ".b", Tensor<S>::zeros({out_c}), true, InitKind::zeros);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv_transpose2d(x, w, b, stride); }
};

template <class S>
struct BatchNorm2dLayer {
  Tensor<S> gamma, beta;
  BatchNormState<S> state;
  S momentum = S(0.1);
  S eps = S(1e-5);

  static BatchNorm2dLayer make(int c, ParamRegistry<S>& reg, const std::string& prefix) {
    BatchNorm2dLayer l;
    l.gamma = reg.add(prefix + ".gamma", Tensor<S>::full({c}, S(1)), true, InitKind::ones);
    l.beta = reg.add(prefix + ".beta", Tensor<S>::zeros({c}), true, InitKind::zeros);
    l.state.running_mean =
        reg.add(prefix + ".running_mean", Tensor<S>::zeros({c}), false, InitKind::zeros);
    l.state.running_var =
        reg.add(prefix + ".running_var", Tensor<S>::full({c}, S(1)), false, InitKind::ones);
    return l;
  }

  Tensor<S> forward(const Tensor<S>& x, bool training) {
    return batchnorm2d(x, gamma, beta, state, training, momentum, eps);
  }
};

// Encoder unit: 3x3 conv (pad 1) -> BN -> LeakyReLU. Pooling is applied by the
// caller so temporal placements can mix the pre-pool features first.
template <class S>
struct ConvBlock {
  Conv2dLayer<S> conv;
  BatchNorm2dLayer<S> bn;
  S slope = S(0.01);

  static ConvBlock make(int in_c, int out_c, S slope, ParamRegistry<S>& reg,
                        const std::string& prefix) {
    ConvBlock b;
    b.slope = slope;
    b.conv = Conv2dLayer<S>::make(in_c, out_c, 3, 3, {1, 1}, {1, 1, 1, 1}, {1, 1}, true, reg,
                                  prefix + ".conv");
    b.bn = BatchNorm2dLayer<S>::make(out_c, reg, prefix + ".bn");
    return b;
  }

  Tensor<S> features(const Tensor<S>& x, bool training) {
    return leaky_relu(bn.forward(conv.forward(x), training), slope);
  }
};

template <class S>
std::pair<Tensor<S>, Tensor<S>> encoder_block_forward(ConvBlock<S>& block, const Tensor<S>& x,
                                                      bool training) {
  Tensor<S> f = block.features(x, training);
  return {f, maxpool2d(f)};
}

// Decoder unit: transposed conv (k2, s2) -> BN -> ReLU -> concat skip ->
// 3x3 conv (pad 1) -> BN -> ReLU. Output channels equal the skip channels.
template <class S>
struct DecoderBlock {
  ConvTranspose2dLayer<S> up;
  BatchNorm2dLayer<S> bn1;
  Conv2dLayer<S> conv;
  BatchNorm2dLayer<S> bn2;
  int skip_channels = 0;

  static DecoderBlock make(int in_c, int skip_c, ParamRegistry<S>& reg,
                           const std::string& prefix) {
    DecoderBlock b;
    b.skip_channels = skip_c;
    b.up = ConvTranspose2dLayer<S>::make(in_c, skip_c, 2, {2, 2}, true, reg, prefix + ".up");
    b.bn1 = BatchNorm2dLayer<S>::make(skip_c, reg, prefix + ".bn1");
    b.conv = Conv2dLayer<S>::make(2 * skip_c, skip_c, 3, 3, {1, 1}, {1, 1, 1, 1}, {1, 1}, true,
                                  reg, prefix + ".conv");
    b.bn2 = BatchNorm2dLayer<S>::make(skip_c, reg, prefix + ".bn2");
    return b;
  }

  Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& skip, bool training) {
    if (skip.dim(2) != 2 * x.dim(2) || skip.dim(3) != 2 * x.dim(3))
      throw ShapeError("decoder: skip " + shape_str(skip.shape()) +
                       " is not 2x the spatial size of " + shape_str(x.shape()));
    Tensor<S> u = relu(bn1.forward(up.forward(x), training));
    Tensor<S> cat = concat<S>({u, skip}, 1);
    return relu(bn2.forward(conv.forward(cat), training));
  }
};

template <class S>
Tensor<S> decoder_block_forward(DecoderBlock<S>& block, const Tensor<S>& x, const Tensor<S>& skip,
                                bool training) {
  return block.forward(x, skip, training);
}

}  // namespace stseg
