#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::core {

// Reverse-mode autodiff over Tensor<T>. Graphs are built dynamically per
// step; nodes own their parents, so a graph lives as long as its root.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Pull model: reads this->grad, accumulates into parents' grads.
  std::function<void(Node<T>&)> backward_fn;

  void ensure_grad() {
    if (grad.numel() != value.numel()) grad = Tensor<T>::zeros(value.shape());
  }
  void accumulate(const Tensor<T>& g) {
    ensure_grad();
    for (std::int64_t i = 0; i < g.numel(); ++i) grad[i] += g[i];
  }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Tensor<T> v, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return Var(n);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& value() { return node_->value; }
  Tensor<T>& grad() { return node_->grad; }
  const Tensor<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  T item() const {
    if (node_->value.numel() != 1) throw ShapeError("item() on non-scalar");
    return node_->value[0];
  }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
               std::function<void(Node<T>&)> bwd) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  if (n->requires_grad) n->backward_fn = std::move(bwd);
  return Var<T>(n);
}

template <typename T>
Var<T> constant(Tensor<T> v) {
  return Var<T>::leaf(std::move(v), false);
}

template <typename T>
Var<T> detach(const Var<T>& a) {
  return Var<T>::leaf(a.value(), false);
}

// Runs backprop from a scalar root. Topological order via iterative DFS.
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().numel() != 1) throw ShapeError("backward() root must be scalar");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad();
  root.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---- broadcasting helpers -------------------------------------------------
//
// Binary ops accept operands of equal shape, or one operand shaped
// [N,1,1,1] (per-sample scalar) or [1,1,1,1] against a full [N,C,H,W].

namespace detail {

struct Bc {
  bool small_lhs = false;   // lhs is the broadcast operand
  bool any_small = false;
  std::int64_t stride = 1;  // full elements per small element
};

inline bool is_small(const Shape4& s, const Shape4& full) {
  return s[1] == 1 && s[2] == 1 && s[3] == 1 && (s[0] == full[0] || s[0] == 1);
}

inline Bc broadcast_info(const Shape4& a, const Shape4& b, const char* what) {
  Bc bc;
  if (a == b) return bc;
  if (is_small(b, a)) {
    bc.any_small = true;
    bc.small_lhs = false;
    bc.stride = (b[0] == 1) ? a[0] * a[1] * a[2] * a[3] : a[1] * a[2] * a[3];
    return bc;
  }
  if (is_small(a, b)) {
    bc.any_small = true;
    bc.small_lhs = true;
    bc.stride = (a[0] == 1) ? b[0] * b[1] * b[2] * b[3] : b[1] * b[2] * b[3];
    return bc;
  }
  throw ShapeError(std::string(what) + ": incompatible shapes " + shape_to_string(a) + " vs " +
                   shape_to_string(b));
}

}  // namespace detail

// Generic elementwise binary op with broadcast on either side.
// f(a,b) -> value; dfa, dfb give local partials as functions of (a,b,y).
template <typename T, typename F, typename Dfa, typename Dfb>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, const char* name, F f, Dfa dfa, Dfb dfb) {
  const auto& av = a.value();
  const auto& bv = b.value();
  auto bc = detail::broadcast_info(av.shape(), bv.shape(), name);
  const Tensor<T>& full = bc.small_lhs ? bv : av;
  Tensor<T> out(full.shape());
  const std::int64_t n = full.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    std::int64_t is = bc.any_small ? i / bc.stride : i;
    T x = bc.small_lhs ? av[is] : av[i];
    T y = bc.small_lhs ? bv[i] : (bc.any_small ? bv[is] : bv[i]);
    out[i] = f(x, y);
  }
  return make_op<T>(
      std::move(out), {a.node(), b.node()},
      [bc, dfa, dfb](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::int64_t n = self.value.numel();
        auto get = [&](const Tensor<T>& t, bool small, std::int64_t i) {
          return small ? t[bc.any_small ? i / bc.stride : i] : t[i];
        };
        bool a_small = bc.any_small && bc.small_lhs;
        bool b_small = bc.any_small && !bc.small_lhs;
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            T x = a_small ? pa.value[i / bc.stride] : pa.value[i];
            T y = b_small ? pb.value[i / bc.stride] : pb.value[i];
            T g = self.grad[i] * dfa(x, y, self.value[i]);
            pa.grad[a_small ? i / bc.stride : i] += g;
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::int64_t i = 0; i < n; ++i) {
            T x = a_small ? pa.value[i / bc.stride] : pa.value[i];
            T y = b_small ? pb.value[i / bc.stride] : pb.value[i];
            T g = self.grad[i] * dfb(x, y, self.value[i]);
            pb.grad[b_small ? i / bc.stride : i] += g;
          }
        }
        (void)get;
      });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  return binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T x, T y, T) { return -x / (y * y); });
}

// Elementwise unary op helper.
template <typename T, typename F, typename Df>
Var<T> unary_op(const Var<T>& a, F f, Df df) {
  const auto& av = a.value();
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  return make_op<T>(std::move(out), {a.node()}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t i = 0; i < self.value.numel(); ++i)
      p.grad[i] += self.grad[i] * df(p.value[i], self.value[i]);
  });
}

template <typename T>
Var<T> affine(const Var<T>& a, T k, T c) {
  return unary_op(
      a, [k, c](T x) { return k * x + c; }, [k](T, T) { return k; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T c) {
  return affine(a, T(1), c);
}
template <typename T>
Var<T> mul_scalar(const Var<T>& a, T k) {
  return affine(a, k, T(0));
}
template <typename T>
Var<T> neg(const Var<T>& a) {
  return mul_scalar(a, T(-1));
}

template <typename T>
Var<T> abs_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Var<T> log_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Var<T> exp_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> tanh_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return T(1) / (T(1) + std::exp(-x)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
T softplus_scalar(T x) {
  return x > T(20) ? x : std::log1p(std::exp(x));
}

template <typename T>
Var<T> softplus_(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return softplus_scalar(x); },
      [](T x, T) { return T(1) / (T(1) + std::exp(-x)); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  return unary_op(
      a, [slope](T x) { return x >= T(0) ? x : slope * x; },
      [slope](T x, T) { return x >= T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary_op(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary_op(
      a, [lo, hi](T x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

// a^p with per-sample (or scalar) exponent p; requires a > 0.
template <typename T>
Var<T> pow_(const Var<T>& a, const Var<T>& p) {
  return binary_op(
      a, p, "pow", [](T x, T y) { return std::pow(x, y); },
      [](T x, T y, T v) { return y * v / x; }, [](T x, T, T v) { return v * std::log(x); });
}

template <typename T>
Var<T> mean_all(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(a.value().mean());
  const T inv = T(1) / static_cast<T>(a.value().numel());
  return make_op<T>(std::move(out), {a.node()}, [inv](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T g = self.grad[0] * inv;
    for (std::int64_t i = 0; i < p.value.numel(); ++i) p.grad[i] += g;
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& a) {
  Tensor<T> out = Tensor<T>::scalar(a.value().sum());
  return make_op<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T g = self.grad[0];
    for (std::int64_t i = 0; i < p.value.numel(); ++i) p.grad[i] += g;
  });
}

// Mean over C,H,W per sample -> [N,1,1,1].
template <typename T>
Var<T> mean_per_sample(const Var<T>& a) {
  const auto& av = a.value();
  const std::int64_t n = av.n(), chw = av.c() * av.h() * av.w();
  Tensor<T> out(Shape4{n, 1, 1, 1});
  for (std::int64_t i = 0; i < n; ++i) {
    T acc = T(0);
    for (std::int64_t j = 0; j < chw; ++j) acc += av[i * chw + j];
    out[i] = acc / static_cast<T>(chw);
  }
  return make_op<T>(std::move(out), {a.node()}, [n, chw](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T inv = T(1) / static_cast<T>(chw);
    for (std::int64_t i = 0; i < n; ++i) {
      const T g = self.grad[i] * inv;
      for (std::int64_t j = 0; j < chw; ++j) p.grad[i * chw + j] += g;
    }
  });
}

// Mean over channels: [N,C,H,W] -> [N,1,H,W].
template <typename T>
Var<T> mean_channels(const Var<T>& a) {
  const auto& av = a.value();
  const std::int64_t N = av.n(), C = av.c(), H = av.h(), W = av.w(), HW = H * W;
  Tensor<T> out(Shape4{N, 1, H, W});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t j = 0; j < HW; ++j) {
      T acc = T(0);
      for (std::int64_t c = 0; c < C; ++c) acc += av[(n * C + c) * HW + j];
      out[n * HW + j] = acc / static_cast<T>(C);
    }
  return make_op<T>(std::move(out), {a.node()}, [N, C, HW](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const T inv = T(1) / static_cast<T>(C);
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t j = 0; j < HW; ++j) {
        const T g = self.grad[n * HW + j] * inv;
        for (std::int64_t c = 0; c < C; ++c) p.grad[(n * C + c) * HW + j] += g;
      }
  });
}

// Channel concatenation of two [N,*,H,W] tensors.
template <typename T>
Var<T> concat_ch(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w())
    throw ShapeError("concat_ch: mismatched N/H/W " + shape_to_string(av.shape()) + " vs " +
                     shape_to_string(bv.shape()));
  const std::int64_t N = av.n(), Ca = av.c(), Cb = bv.c(), HW = av.h() * av.w();
  Tensor<T> out(Shape4{N, Ca + Cb, av.h(), av.w()});
  for (std::int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data() + (n * (Ca + Cb)) * HW, av.data() + n * Ca * HW,
                sizeof(T) * static_cast<std::size_t>(Ca * HW));
    std::memcpy(out.data() + (n * (Ca + Cb) + Ca) * HW, bv.data() + n * Cb * HW,
                sizeof(T) * static_cast<std::size_t>(Cb * HW));
  }
  return make_op<T>(std::move(out), {a.node(), b.node()}, [N, Ca, Cb, HW](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t j = 0; j < Ca * HW; ++j)
          pa.grad[n * Ca * HW + j] += self.grad[n * (Ca + Cb) * HW + j];
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t j = 0; j < Cb * HW; ++j)
          pb.grad[n * Cb * HW + j] += self.grad[(n * (Ca + Cb) + Ca) * HW + j];
    }
  });
}

// Channel slice [start, start+count) of a [N,C,H,W] tensor.
template <typename T>
Var<T> slice_ch(const Var<T>& a, std::int64_t start, std::int64_t count) {
  const auto& av = a.value();
  const std::int64_t N = av.n(), C = av.c(), HW = av.h() * av.w();
  if (start < 0 || count <= 0 || start + count > C)
    throw ShapeError("slice_ch: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " + std::to_string(C) +
                     " channels");
  Tensor<T> out(Shape4{N, count, av.h(), av.w()});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < count; ++c)
      std::memcpy(out.data() + (n * count + c) * HW, av.data() + (n * C + start + c) * HW,
                  sizeof(T) * static_cast<std::size_t>(HW));
  return make_op<T>(std::move(out), {a.node()}, [N, C, HW, start, count](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < count; ++c)
        for (std::int64_t j = 0; j < HW; ++j)
          p.grad[(n * C + start + c) * HW + j] += self.grad[(n * count + c) * HW + j];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape4 shape) {
  Tensor<T> out = a.value().reshaped(shape);
  return make_op<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t i = 0; i < self.grad.numel(); ++i) p.grad[i] += self.grad[i];
  });
}

// Broadcast a [N,K,1,1] code over H x W -> [N,K,H,W].
template <typename T>
Var<T> broadcast_hw(const Var<T>& a, std::int64_t H, std::int64_t W) {
  const auto& av = a.value();
  if (av.h() != 1 || av.w() != 1) throw ShapeError("broadcast_hw expects [N,K,1,1]");
  const std::int64_t N = av.n(), K = av.c(), HW = H * W;
  Tensor<T> out(Shape4{N, K, H, W});
  for (std::int64_t nk = 0; nk < N * K; ++nk)
    for (std::int64_t j = 0; j < HW; ++j) out[nk * HW + j] = av[nk];
  return make_op<T>(std::move(out), {a.node()}, [N, K, HW](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::int64_t nk = 0; nk < N * K; ++nk) {
      T acc = T(0);
      for (std::int64_t j = 0; j < HW; ++j) acc += self.grad[nk * HW + j];
      p.grad[nk] += acc;
    }
  });
}

// mean |a-b|
template <typename T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  return mean_all(abs_(sub(a, b)));
}

// mean (a-b)^2
template <typename T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  return mean_all(square(sub(a, b)));
}

}  // namespace stawgan::core
