#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stseg/common.hpp"

namespace stseg {

template <class S>
struct Node;
template <class S>
using NodePtr = std::shared_ptr<Node<S>>;

// One value in the backward graph. Leaves (parameters, inputs, constants) have no
// backward_fn; interior nodes keep their inputs alive through `parents`.
template <class S>
struct Node {
  std::vector<std::int64_t> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until first touched; then same size as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<S>> parents;
  std::function<void(Node<S>&)> backward_fn;

  std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }

// Disables graph construction in scope (eval / finite-difference probes).
struct NoGradGuard {
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), static_cast<std::int64_t>(1),
                         std::multiplies<>());
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr<S> n) : node_(std::move(n)) {}

  static Tensor zeros(std::vector<std::int64_t> shape) {
    return full(std::move(shape), S(0));
  }

  static Tensor full(std::vector<std::int64_t> shape, S v) {
    std::vector<S> data(static_cast<std::size_t>(shape_numel(shape)), v);
    return from_data(std::move(shape), std::move(data));
  }

  static Tensor from_data(std::vector<std::int64_t> shape, std::vector<S> data) {
    for (auto d : shape)
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<S>>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return Tensor(n);
  }

  static Tensor scalar(S v) { return from_data({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const std::vector<std::int64_t>& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->numel(); }
  std::size_t rank() const { return node_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return node_->shape[i]; }

  std::span<S> data() { return {node_->value.data(), node_->value.size()}; }
  std::span<const S> data() const { return {node_->value.data(), node_->value.size()}; }

  std::span<S> grad() {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  std::span<const S> grad() const {
    node_->ensure_grad();
    return {node_->grad.data(), node_->grad.size()};
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    if (node_->backward_fn)
      throw ShapeError("requires_grad can only be toggled on leaf tensors");
    node_->requires_grad = v;
    return *this;
  }

  S item() const {
    if (numel() != 1) throw ShapeError("item() needs a scalar, got " + shape_str(shape()));
    return node_->value[0];
  }

  // Graph-free copy of the value.
  Tensor detach() const { return from_data(node_->shape, node_->value); }

  NodePtr<S> node() const { return node_; }

 private:
  NodePtr<S> node_;
};

// Creates an interior node when autograd is on and any input needs gradients;
// otherwise returns a plain leaf carrying the value.
template <class S>
Tensor<S> make_op(const char* tag, std::vector<std::int64_t> shape, std::vector<S> value,
                  std::vector<NodePtr<S>> parents, std::function<void(Node<S>&)> bw) {
  auto n = std::make_shared<Node<S>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool track = grad_enabled();
  if (track) {
    track = false;
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        track = true;
        break;
      }
  }
  if (track) {
    n->requires_grad = true;
    n->op = tag;
    n->parents = std::move(parents);
    n->backward_fn = std::move(bw);
  }
  return Tensor<S>(n);
}

// Topologically ordered record of one forward pass: every node appears after all of
// its parents, so the reversed order visits each node exactly once, after all its
// consumers.
template <class S>
struct GraphTape {
  std::vector<Node<S>*> order;

  static GraphTape build(const Tensor<S>& root) {
    GraphTape tape;
    if (!root.defined() || !root.node()->requires_grad) return tape;
    std::unordered_set<Node<S>*> seen;
    std::vector<std::pair<Node<S>*, std::size_t>> stack;
    seen.insert(root.node().get());
    stack.emplace_back(root.node().get(), 0);
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<S>* p = n->parents[next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        tape.order.push_back(n);
        stack.pop_back();
      }
    }
    return tape;
  }
};

template <class S>
void backward(const Tensor<S>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ShapeError("backward expects a scalar loss");
  Node<S>* root = loss.node().get();
  if (!root->requires_grad) return;  // constant loss (e.g. all pixels void): nothing to do
  auto tape = GraphTape<S>::build(loss);
  root->ensure_grad();
  root->grad[0] += S(1);
  for (auto it = tape.order.rbegin(); it != tape.order.rend(); ++it) {
    Node<S>* n = *it;
    if (!n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
  }
}

namespace detail {
template <class S>
inline void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* what) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  auto av = a.data(), bv = b.data();
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op<S>("add", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i];
    }
  });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  auto av = a.data(), bv = b.data();
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  auto pa = a.node(), pb = b.node();
  return make_op<S>("mul", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node<S>& self) {
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * pb->value[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        pb->grad[i] += self.grad[i] * pa->value[i];
    }
  });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  auto av = a.data();
  std::vector<S> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * c;
  auto pa = a.node();
  return make_op<S>("scale", a.shape(), std::move(out), {pa}, [pa, c](Node<S>& self) {
    if (!pa->requires_grad) return;
    pa->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * c;
  });
}

enum class ActKind { relu, leaky_relu, sigmoid, tanh };

template <class S>
Tensor<S> activation(const Tensor<S>& x, ActKind kind, S leaky_slope = S(0.01)) {
  auto xv = x.data();
  std::vector<S> out(xv.size());
  switch (kind) {
    case ActKind::relu:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > S(0) ? xv[i] : S(0);
      break;
    case ActKind::leaky_relu:
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = xv[i] > S(0) ? xv[i] : leaky_slope * xv[i];
      break;
    case ActKind::sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = S(1) / (S(1) + std::exp(-xv[i]));
      break;
    case ActKind::tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
  }
  auto px = x.node();
  return make_op<S>("activation", x.shape(), std::move(out), {px},
                    [px, kind, leaky_slope](Node<S>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        S y = self.value[i], d{};
                        switch (kind) {
                          case ActKind::relu: d = y > S(0) ? S(1) : S(0); break;
                          case ActKind::leaky_relu: d = y > S(0) ? S(1) : leaky_slope; break;
                          case ActKind::sigmoid: d = y * (S(1) - y); break;
                          case ActKind::tanh: d = S(1) - y * y; break;
                        }
                        px->grad[i] += self.grad[i] * d;
                      }
                    });
}

template <class S>
Tensor<S> relu(const Tensor<S>& x) {
  return activation(x, ActKind::relu);
}
template <class S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope = S(0.01)) {
  return activation(x, ActKind::leaky_relu, slope);
}
template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return activation(x, ActKind::sigmoid);
}
template <class S>
Tensor<S> tanh_op(const Tensor<S>& x) {
  return activation(x, ActKind::tanh);
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& inputs, std::size_t axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const auto& ref = inputs[0].shape();
  if (axis >= ref.size()) throw ShapeError("concat: axis out of range");
  std::int64_t axis_total = 0;
  for (const auto& t : inputs) {
    const auto& s = t.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != ref[d])
        throw ShapeError("concat: off-axis dim mismatch " + shape_str(s) + " vs " +
                         shape_str(ref));
    axis_total += s[axis];
  }
  std::vector<std::int64_t> out_shape = ref;
  out_shape[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];

  std::vector<S> out(static_cast<std::size_t>(shape_numel(out_shape)));
  const std::int64_t out_row = axis_total * inner;
  std::int64_t off = 0;
  for (const auto& t : inputs) {
    const std::int64_t run = t.shape()[axis] * inner;
    auto tv = t.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::copy_n(tv.data() + o * run, run, out.data() + o * out_row + off);
    off += run;
  }

  std::vector<NodePtr<S>> parents;
  parents.reserve(inputs.size());
  for (const auto& t : inputs) parents.push_back(t.node());
  return make_op<S>("concat", std::move(out_shape), std::move(out), parents,
                    [parents, outer, out_row](Node<S>& self) {
                      std::int64_t off = 0;
                      for (const auto& p : parents) {
                        const std::int64_t prun = p->numel() / outer;
                        if (p->requires_grad) {
                          p->ensure_grad();
                          for (std::int64_t o = 0; o < outer; ++o) {
                            const S* g = self.grad.data() + o * out_row + off;
                            S* dst = p->grad.data() + o * prun;
                            for (std::int64_t i = 0; i < prun; ++i) dst[i] += g[i];
                          }
                        }
                        off += prun;
                      }
                    });
}

// Contiguous sub-range along one axis.
template <class S>
Tensor<S> narrow(const Tensor<S>& x, std::size_t axis, std::int64_t start, std::int64_t len) {
  const auto& s = x.shape();
  if (axis >= s.size()) throw ShapeError("narrow: axis out of range");
  if (start < 0 || len <= 0 || start + len > s[axis])
    throw ShapeError("narrow: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") outside dim " + std::to_string(s[axis]));
  std::int64_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
  std::vector<std::int64_t> out_shape = s;
  out_shape[axis] = len;

  const std::int64_t in_row = s[axis] * inner, run = len * inner, off = start * inner;
  std::vector<S> out(static_cast<std::size_t>(outer * run));
  auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(xv.data() + o * in_row + off, run, out.data() + o * run);

  auto px = x.node();
  return make_op<S>("narrow", std::move(out_shape), std::move(out), {px},
                    [px, outer, in_row, run, off](Node<S>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      for (std::int64_t o = 0; o < outer; ++o) {
                        const S* g = self.grad.data() + o * run;
                        S* dst = px->grad.data() + o * in_row + off;
                        for (std::int64_t i = 0; i < run; ++i) dst[i] += g[i];
                      }
                    });
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<std::int64_t> new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  for (auto d : new_shape)
    if (d <= 0) throw ShapeError("reshape: dims must be positive");
  std::vector<S> out(x.data().begin(), x.data().end());
  auto px = x.node();
  return make_op<S>("reshape", std::move(new_shape), std::move(out), {px}, [px](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px->grad[i] += self.grad[i];
  });
}

template <class S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
  const auto& s = x.shape();
  if (perm.size() != s.size()) throw ShapeError("permute: order size mismatch");
  std::vector<bool> used(perm.size(), false);
  for (auto p : perm) {
    if (p >= perm.size() || used[p]) throw ShapeError("permute: order is not a permutation");
    used[p] = true;
  }
  const std::size_t r = s.size();
  std::vector<std::int64_t> out_shape(r);
  for (std::size_t d = 0; d < r; ++d) out_shape[d] = s[perm[d]];

  std::vector<std::int64_t> in_strides(r, 1);
  for (std::size_t d = r - 1; d > 0; --d) in_strides[d - 1] = in_strides[d] * s[d];
  std::vector<std::int64_t> map_stride(r);  // stride of input as we walk output coords
  for (std::size_t d = 0; d < r; ++d) map_stride[d] = in_strides[perm[d]];

  const std::int64_t n = x.numel();
  std::vector<S> out(static_cast<std::size_t>(n));
  auto xv = x.data();
  std::vector<std::int64_t> coord(r, 0);
  std::int64_t src = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = xv[static_cast<std::size_t>(src)];
    for (std::size_t d = r; d-- > 0;) {
      coord[d]++;
      src += map_stride[d];
      if (coord[d] < out_shape[d]) break;
      src -= coord[d] * map_stride[d];
      coord[d] = 0;
    }
  }

  auto px = x.node();
  std::vector<std::int64_t> shp = out_shape;  // lambda walks output coords
  return make_op<S>("permute", std::move(out_shape), std::move(out), {px},
                    [px, map_stride, shp](Node<S>& self) {
                      if (!px->requires_grad) return;
                      px->ensure_grad();
                      const std::size_t r = shp.size();
                      std::vector<std::int64_t> coord(r, 0);
                      std::int64_t src = 0;
                      for (std::size_t i = 0; i < self.grad.size(); ++i) {
                        px->grad[static_cast<std::size_t>(src)] += self.grad[i];
                        for (std::size_t d = r; d-- > 0;) {
                          coord[d]++;
                          src += map_stride[d];
                          if (coord[d] < shp[d]) break;
                          src -= coord[d] * map_stride[d];
                          coord[d] = 0;
                        }
                      }
                    });
}

// C[m,n] = A[m,k] * B[k,n]
template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m * n), S(0));
  auto av = a.data(), bv = b.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t p = 0; p < k; ++p) {
      const S aip = av[i * k + p];
      const S* brow = bv.data() + p * n;
      S* crow = out.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  auto pa = a.node(), pb = b.node();
  return make_op<S>("matmul", {m, n}, std::move(out), {pa, pb},
                    [pa, pb, m, k, n](Node<S>& self) {
                      if (pa->requires_grad) {
                        pa->ensure_grad();
                        // dA = g * B^T
                        for (std::int64_t i = 0; i < m; ++i)
                          for (std::int64_t p = 0; p < k; ++p) {
                            S acc = 0;
                            const S* g = self.grad.data() + i * n;
                            const S* brow = pb->value.data() + p * n;
                            for (std::int64_t j = 0; j < n; ++j) acc += g[j] * brow[j];
                            pa->grad[i * k + p] += acc;
                          }
                      }
                      if (pb->requires_grad) {
                        pb->ensure_grad();
                        // dB = A^T * g
                        for (std::int64_t p = 0; p < k; ++p)
                          for (std::int64_t i = 0; i < m; ++i) {
                            const S aip = pa->value[i * k + p];
                            const S* g = self.grad.data() + i * n;
                            S* brow = pb->grad.data() + p * n;
                            for (std::int64_t j = 0; j < n; ++j) brow[j] += aip * g[j];
                          }
                      }
                    });
}

// Y[i,j] = X[i,j] + b[i]
template <class S>
Tensor<S> add_row_bias(const Tensor<S>& x, const Tensor<S>& b) {
  if (x.rank() != 2 || b.rank() != 1 || b.dim(0) != x.dim(0))
    throw ShapeError("add_row_bias: need X[m,n], b[m]");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m * n));
  auto xv = x.data(), bv = b.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[i];
  auto px = x.node(), pb = b.node();
  return make_op<S>("add_row_bias", x.shape(), std::move(out), {px, pb},
                    [px, pb, m, n](Node<S>& self) {
                      if (px->requires_grad) {
                        px->ensure_grad();
                        for (std::size_t i = 0; i < self.grad.size(); ++i)
                          px->grad[i] += self.grad[i];
                      }
                      if (pb->requires_grad) {
                        pb->ensure_grad();
                        for (std::int64_t i = 0; i < m; ++i) {
                          S acc = 0;
                          const S* g = self.grad.data() + i * n;
                          for (std::int64_t j = 0; j < n; ++j) acc += g[j];
                          pb->grad[i] += acc;
                        }
                      }
                    });
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
  S acc = 0;
  for (S v : x.data()) acc += v;
  auto px = x.node();
  return make_op<S>("sum_all", {1}, {acc}, {px}, [px](Node<S>& self) {
    if (!px->requires_grad) return;
    px->ensure_grad();
    const S g = self.grad[0];
    for (auto& gv : px->grad) gv += g;
  });
}

// Scales every gradient by max_norm/g when the global L2 norm g exceeds max_norm.
// Operates on raw gradient buffers; returns the applied factor.
template <class S>
S global_grad_norm_clip(const std::vector<Tensor<S>>& params, S max_norm) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm <= static_cast<double>(max_norm) || norm == 0.0) return S(1);
  const S factor = static_cast<S>(static_cast<double>(max_norm) / norm);
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    auto t = const_cast<Tensor<S>&>(p).grad();
    for (auto& g : t) g *= factor;
  }
  return factor;
}

template <class S>
double global_grad_norm(const std::vector<Tensor<S>>& params) {
  double sq = 0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (S g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

}  // namespace stseg
