#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stawgan/errors.hpp"

namespace stawgan::core {

using Shape4 = std::array<std::int64_t, 4>;

inline std::string shape_to_string(const Shape4& s) {
  std::ostringstream os;
  os << "[" << s[0] << "," << s[1] << "," << s[2] << "," << s[3] << "]";
  return os.str();
}

// Dense NCHW tensor. Everything in the library is expressed in terms of this
// one container; vectors live as [N,K,1,1] and scalars as [1,1,1,1].
template <typename T>
class Tensor {
 public:
  Tensor() : shape_{0, 0, 0, 0} {}

  explicit Tensor(Shape4 shape, T fill = T(0)) : shape_(shape) {
    for (auto d : shape_) {
      if (d <= 0) throw ShapeError("non-positive tensor dimension " + shape_to_string(shape_));
    }
    data_.assign(static_cast<std::size_t>(numel()), fill);
  }

  Tensor(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (static_cast<std::int64_t>(data_.size()) != numel())
      throw ShapeError("tensor data size does not match shape " + shape_to_string(shape_));
  }

  static Tensor zeros(Shape4 shape) { return Tensor(shape, T(0)); }
  static Tensor full(Shape4 shape, T v) { return Tensor(shape, v); }
  static Tensor scalar(T v) { return Tensor(Shape4{1, 1, 1, 1}, v); }
  static Tensor vec(const std::vector<T>& v) {
    Tensor t(Shape4{1, static_cast<std::int64_t>(v.size()), 1, 1});
    std::copy(v.begin(), v.end(), t.data_.begin());
    return t;
  }

  const Shape4& shape() const noexcept { return shape_; }
  std::int64_t n() const noexcept { return shape_[0]; }
  std::int64_t c() const noexcept { return shape_[1]; }
  std::int64_t h() const noexcept { return shape_[2]; }
  std::int64_t w() const noexcept { return shape_[3]; }
  std::int64_t numel() const noexcept { return shape_[0] * shape_[1] * shape_[2] * shape_[3]; }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::vector<T>& raw() noexcept { return data_; }
  const std::vector<T>& raw() const noexcept { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  const T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape4 shape) const {
    Tensor out(shape);
    if (out.numel() != numel())
      throw ShapeError("reshape " + shape_to_string(shape_) + " -> " + shape_to_string(shape) +
                       " changes element count");
    out.data_ = data_;
    return out;
  }

  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  T sum() const {
    T acc = T(0);
    for (const T& v : data_) acc += v;
    return acc;
  }
  T mean() const { return numel() > 0 ? sum() / static_cast<T>(numel()) : T(0); }
  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[static_cast<std::size_t>(i)]);
    return out;
  }

 private:
  Shape4 shape_;
  std::vector<T> data_;
};

inline void check_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_to_string(a) + " vs " +
                     shape_to_string(b));
}

// Deterministic RNG. std::mt19937_64 has a standardized sequence but the
// distributions do not, so the transforms are spelled out here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  // splitmix64 step
  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0,1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  bool coin() { return (next_u64() & 1ull) != 0; }

  // Box-Muller
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::int64_t>(last - first);
    for (std::int64_t i = n - 1; i > 0; --i) {
      std::int64_t j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  // Derive an independent stream, e.g. one per epoch.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    Rng r(seed ^ (0x632be59bd9b4e019ull * (stream + 1)));
    return r.next_u64();
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
Tensor<T> random_normal(Shape4 shape, Rng& rng, double mean = 0.0, double stddev = 1.0) {
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal(mean, stddev));
  return t;
}

template <typename T>
Tensor<T> random_uniform(Shape4 shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  Tensor<T> t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

}  // namespace stawgan::core
