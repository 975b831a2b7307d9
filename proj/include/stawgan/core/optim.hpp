#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stawgan/core/autodiff.hpp"
#include "stawgan/core/tensor.hpp"
#include "stawgan/errors.hpp"

namespace stawgan::core {

// Named trainable parameters of one network, in registration order.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Var<T>>> items;

  Var<T> add(const std::string& name, Tensor<T> init) {
    auto v = Var<T>::leaf(std::move(init), true);
    items.emplace_back(name, v);
    return v;
  }

  Var<T>* find(const std::string& name) {
    for (auto& [n, v] : items)
      if (n == name) return &v;
    return nullptr;
  }

  void zero_grad() {
    for (auto& [n, v] : items) v.zero_grad();
  }

  std::int64_t numel() const {
    std::int64_t total = 0;
    for (const auto& [n, v] : items) total += v.value().numel();
    return total;
  }
};

// Adam with bias correction. Moment buffers are exposed for checkpointing.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamSet<T>* params, T lr, T beta1, T beta2, T eps = T(1e-8))
      : params_(params), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& [name, p] : params_->items) {
      m_.push_back(Tensor<T>::zeros(p.value().shape()));
      v_.push_back(Tensor<T>::zeros(p.value().shape()));
    }
  }

  void set_lr(T lr) { lr_ = lr; }
  T lr() const { return lr_; }
  std::int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
    for (std::size_t i = 0; i < params_->items.size(); ++i) {
      auto& p = params_->items[i].second;
      if (p.grad().empty()) continue;  // parameter not touched this step
      Tensor<T>& m = m_[i];
      Tensor<T>& v = v_[i];
      Tensor<T>& val = p.value();
      const Tensor<T>& g = p.grad();
      for (std::int64_t j = 0; j < val.numel(); ++j) {
        m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
        v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        val[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  // Checkpoint access.
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  ParamSet<T>* params_ = nullptr;
  T lr_ = T(1e-3), beta1_ = T(0.9), beta2_ = T(0.999), eps_ = T(1e-8);
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

}  // namespace stawgan::core
