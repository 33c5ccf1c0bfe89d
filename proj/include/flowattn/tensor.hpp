// Copyright 2026 The flowattn Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense row-major tensors (rank 1..4) and the free-function arithmetic the
// attention kernels, the model and the autodiff tape are built from.
//
// Every reduction walks its axis in ascending index order, so results are
// reproducible bit-for-bit across runs and against scalar loop oracles.

#ifndef FLOWATTN_TENSOR_HPP_
#define FLOWATTN_TENSOR_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "flowattn/error.hpp"

namespace flowattn {

inline constexpr std::size_t kMaxRank = 4;

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents) {
    if (extents.size() == 0 || extents.size() > kMaxRank) {
      throw DimensionError("shape rank must be in [1, 4], got " +
                           std::to_string(extents.size()));
    }
    for (std::size_t e : extents) push(e);
  }
  template <typename It>
  Shape(It first, It last) {
    for (; first != last; ++first) push(static_cast<std::size_t>(*first));
    if (rank_ == 0) throw DimensionError("shape rank must be >= 1");
  }

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return extents_[axis]; }
  std::size_t numel() const {
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank_; ++i) n *= extents_[i];
    return rank_ == 0 ? 0 : n;
  }
  std::span<const std::size_t> extents() const { return {extents_.data(), rank_}; }

  // Product of extents in [begin, end).
  std::size_t span_product(std::size_t begin, std::size_t end) const {
    std::size_t n = 1;
    for (std::size_t i = begin; i < end; ++i) n *= extents_[i];
    return n;
  }

  Shape with_axis_removed(std::size_t axis) const {
    Shape s;
    for (std::size_t i = 0; i < rank_; ++i)
      if (i != axis) s.push(extents_[i]);
    if (s.rank_ == 0) s.push(1);
    return s;
  }
  Shape with_axis_inserted(std::size_t axis, std::size_t extent) const {
    if (rank_ + 1 > kMaxRank) throw DimensionError("broadcast would exceed rank 4: " + str());
    Shape s;
    for (std::size_t i = 0; i <= rank_; ++i) {
      if (i == axis) s.push(extent);
      if (i < rank_) s.push(extents_[i]);
    }
    return s;
  }
  Shape with_axes_swapped(std::size_t a, std::size_t b) const {
    Shape s = *this;
    std::swap(s.extents_[a], s.extents_[b]);
    return s;
  }

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < rank_; ++i) os << (i ? "x" : "") << extents_[i];
    os << ']';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.extents_[i] != b.extents_[i]) return false;
    return true;
  }

 private:
  void push(std::size_t e) {
    if (rank_ == kMaxRank) throw DimensionError("shape rank exceeds 4");
    if (e == 0) throw DimensionError("shape extents must be >= 1");
    extents_[rank_++] = e;
  }

  std::array<std::size_t, kMaxRank> extents_{};
  std::size_t rank_ = 0;
};

template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor holds float or double");

 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  // Rank-2 literal, e.g. Tensor<double>::matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t n = rows.size();
    const std::size_t d = n ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(n * d);
    for (const auto& r : rows) {
      if (r.size() != d) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), r.begin(), r.end());
    }
    return Tensor(Shape{n, d}, std::move(data));
  }
  static Tensor vector(std::initializer_list<T> values) {
    return Tensor(Shape{values.size()}, std::vector<T>(values));
  }
  static Tensor scalar(T value) { return Tensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() & { return data_; }
  std::span<const T> values() const& { return data_; }
  std::vector<T> values() && { return std::move(data_); }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  // Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    return std::move(out).reshaped(shape);
  }
  Tensor reshaped(Shape shape) && {
    if (shape.numel() != data_.size()) {
      throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    shape_ = shape;
    return std::move(*this);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

inline void require_axis(const Shape& s, std::size_t axis, const char* op) {
  if (axis >= s.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + s.str());
  }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Splits a shape around `axis` into (outer, length, inner) strides.
struct AxisView {
  std::size_t outer, length, inner;
};
inline AxisView axis_view(const Shape& s, std::size_t axis) {
  return {s.span_product(0, axis), s[axis], s.span_product(axis + 1, s.rank())};
}

template <typename T>
void check_finite([[maybe_unused]] const Tensor<T>& t, [[maybe_unused]] const char* op) {
#ifndef NDEBUG
  for (T v : t.values()) {
    if (!std::isfinite(v)) throw InternalError(std::string(op) + ": produced a non-finite value");
  }
#endif
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> zip(const Tensor<T>& a, const Tensor<T>& b, F f, const char* op) {
  require_same_shape(a.shape(), b.shape(), op);
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

template <typename T>
T sigmoid_scalar(T x) {
  // Branching keeps exp() from overflowing for large |x|.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T gelu_scalar(T x) {
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  return T(0.5) * x * (T(1) + std::tanh(kC * (x + T(0.044715) * x * x * x)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x + y; }, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x - y; }, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::zip(a, b, [](T x, T y) { return x * y; }, "mul");
}
template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return detail::map(x, [factor](T v) { return v * factor; });
}
template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::map(x, [c](T v) { return v + c; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return detail::sigmoid_scalar(v); });
}
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  auto out = detail::map(x, [](T v) { return std::exp(v); });
  detail::check_finite(out, "exp");
  return out;
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return v > T(0) ? v : T(0); });
}
template <typename T>
Tensor<T> elu_plus_one(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return v > T(0) ? v + T(1) : std::exp(v); });
}
template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  return detail::map(x, [](T v) { return detail::gelu_scalar(v); });
}

// num / (den + eps). `den` either matches `num` or equals its leading axes,
// in which case it is broadcast over the trailing ones (n x h over n x h x e).
template <typename T>
Tensor<T> stable_div(const Tensor<T>& num, const Tensor<T>& den, T eps) {
  if (!(eps >= T(0))) throw ContractError("stable_div: eps must be non-negative");
  const Shape& ns = num.shape();
  const Shape& ds = den.shape();
  bool prefix = ds.rank() <= ns.rank();
  for (std::size_t i = 0; prefix && i < ds.rank(); ++i) prefix = ds[i] == ns[i];
  if (!prefix) {
    throw DimensionError("stable_div: denominator " + ds.str() + " does not broadcast to " + ns.str());
  }
  const std::size_t inner = ns.numel() / ds.numel();
  Tensor<T> out(ns);
  const T* pn = num.data();
  const T* pd = den.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < den.size(); ++o) {
    if (pd[o] < T(0)) {
      throw DomainError("stable_div: negative denominator " + std::to_string(pd[o]) + " at index " +
                        std::to_string(o) + " (flow capacities must be non-negative)");
    }
    const T denom = pd[o] + eps;
    for (std::size_t i = 0; i < inner; ++i) dst[o * inner + i] = pn[o * inner + i] / denom;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and scans
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require_axis(x.shape(), axis, "sum_axis");
  const auto [outer, len, inner] = detail::axis_view(x.shape(), axis);
  Tensor<T> out(x.shape().with_axis_removed(axis));
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t in = 0; in < inner; ++in) dst[o * inner + in] += src[(o * len + i) * inner + in];
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
  T s = T(0);
  for (T v : x.values()) s += v;
  return s;
}

// Inserts a new axis of `extent` copies at position `axis`.
template <typename T>
Tensor<T> broadcast_axis(const Tensor<T>& x, std::size_t axis, std::size_t extent) {
  if (axis > x.rank()) throw DimensionError("broadcast_axis: axis out of range for " + x.shape().str());
  Tensor<T> out(x.shape().with_axis_inserted(axis, extent));
  const std::size_t outer = x.shape().span_product(0, axis);
  const std::size_t inner = x.shape().span_product(axis, x.rank());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t r = 0; r < extent; ++r)
      std::copy_n(src + o * inner, inner, dst + (o * extent + r) * inner);
  return out;
}

template <typename T>
Tensor<T> softmax_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require_axis(x.shape(), axis, "softmax_axis");
  const auto [outer, len, inner] = detail::axis_view(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, src[base + i * inner]);
      T total = T(0);
      for (std::size_t i = 0; i < len; ++i) {
        const T e = std::exp(src[base + i * inner] - mx);
        dst[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < len; ++i) dst[base + i * inner] /= total;
    }
  }
  return out;
}

// Prefix-normalized softmax: out_t = exp(x_t) / sum_{j<=t} exp(x_j) along
// `axis`. A running maximum keeps exp() bounded, and out_t never reads x_j
// for j > t.
template <typename T>
Tensor<T> causal_softmax_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require_axis(x.shape(), axis, "causal_softmax_axis");
  const auto [outer, len, inner] = detail::axis_view(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T running_max = -std::numeric_limits<T>::infinity();
      T running_sum = T(0);
      for (std::size_t t = 0; t < len; ++t) {
        const T v = src[base + t * inner];
        if (v > running_max) {
          running_sum *= std::exp(running_max - v);
          running_max = v;
        }
        const T e = std::exp(v - running_max);
        running_sum += e;
        dst[base + t * inner] = e / running_sum;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> cumsum_axis(const Tensor<T>& x, std::size_t axis) {
  detail::require_axis(x.shape(), axis, "cumsum_axis");
  const auto [outer, len, inner] = detail::axis_view(x.shape(), axis);
  Tensor<T> out(x.shape());
  const T* src = x.data();
  T* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * len * inner;
    std::copy_n(src + base, inner, dst + base);
    for (std::size_t i = 1; i < len; ++i)
      for (std::size_t in = 0; in < inner; ++in)
        dst[base + i * inner + in] = dst[base + (i - 1) * inner + in] + src[base + i * inner + in];
  }
  return out;
}

// Per-row normalization over the last axis with biased (1/d) variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t d = x.extent(x.rank() - 1);
  if (gamma.size() != d || beta.size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + gamma.shape().str() + "/" + beta.shape().str() +
                         " do not match feature extent of " + x.shape().str());
  }
  const std::size_t rows = x.size() / d;
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data() + r * d;
    T mean = T(0);
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= T(d);
    T var = T(0);
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= T(d);
    const T inv_std = T(1) / std::sqrt(var + eps);
    T* dst = out.data() + r * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] = (row[c] - mean) * inv_std * gamma[c] + beta[c];
  }
  detail::check_finite(out, "layer_norm");
  return out;
}

// ---------------------------------------------------------------------------
// Contractions and layout
// ---------------------------------------------------------------------------

// [n x k] * [k x p], or batched [b x n x k] * [b x k x p]. Each output
// element accumulates over k in ascending order starting from zero.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const bool ok = as.rank() == bs.rank() && (as.rank() == 2 || as.rank() == 3) &&
                  as[as.rank() - 1] == bs[bs.rank() - 2] && (as.rank() == 2 || as[0] == bs[0]);
  if (!ok) throw DimensionError("matmul: incompatible shapes " + as.str() + " and " + bs.str());
  const std::size_t batch = as.rank() == 3 ? as[0] : 1;
  const std::size_t n = as[as.rank() - 2];
  const std::size_t k = as[as.rank() - 1];
  const std::size_t p = bs[bs.rank() - 1];
  Tensor<T> out(as.rank() == 3 ? Shape{batch, n, p} : Shape{n, p});
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const T* pa = a.data() + bi * n * k;
    const T* pb = b.data() + bi * k * p;
    T* pc = out.data() + bi * n * p;
    for (std::size_t i = 0; i < n; ++i) {
      T* crow = pc + i * p;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const T aik = pa[i * k + kk];
        const T* brow = pb + kk * p;
        for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> swap_axes(const Tensor<T>& x, std::size_t a, std::size_t b) {
  detail::require_axis(x.shape(), a, "swap_axes");
  detail::require_axis(x.shape(), b, "swap_axes");
  if (a == b) return x;
  if (a > b) std::swap(a, b);
  const Shape& s = x.shape();
  Tensor<T> out(s.with_axes_swapped(a, b));
  // Pad to rank 4 so a single loop nest covers every case.
  std::array<std::size_t, kMaxRank> ext{1, 1, 1, 1};
  const std::size_t off = kMaxRank - s.rank();
  for (std::size_t i = 0; i < s.rank(); ++i) ext[off + i] = s[i];
  a += off;
  b += off;
  std::array<std::size_t, kMaxRank> src_stride{};
  src_stride[3] = 1;
  for (int i = 2; i >= 0; --i) src_stride[i] = src_stride[i + 1] * ext[i + 1];
  std::array<std::size_t, kMaxRank> out_ext = ext;
  std::swap(out_ext[a], out_ext[b]);
  std::array<std::size_t, kMaxRank> perm_stride = src_stride;
  std::swap(perm_stride[a], perm_stride[b]);
  T* dst = out.data();
  const T* src = x.data();
  for (std::size_t i0 = 0; i0 < out_ext[0]; ++i0)
    for (std::size_t i1 = 0; i1 < out_ext[1]; ++i1)
      for (std::size_t i2 = 0; i2 < out_ext[2]; ++i2)
        for (std::size_t i3 = 0; i3 < out_ext[3]; ++i3)
          *dst++ = src[i0 * perm_stride[0] + i1 * perm_stride[1] + i2 * perm_stride[2] + i3 * perm_stride[3]];
  return out;
}

template <typename T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2, got " + x.shape().str());
  return swap_axes(x, x.rank() - 2, x.rank() - 1);
}

// n x d -> n x h x d/h. Row-major layout makes both directions a pure
// reshape, so merge_heads(split_heads(x)) is bit-identical to x.
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.extent(1) % heads != 0) {
    throw DimensionError("split_heads: channels of " + x.shape().str() + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  return x.reshaped(Shape{x.extent(0), heads, x.extent(1) / heads});
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 3) throw DimensionError("merge_heads: expected rank 3, got " + x.shape().str());
  return x.reshaped(Shape{x.extent(0), x.extent(1) * x.extent(2)});
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  return x.reshaped(shape);
}

// [start, stop) as a rank-1 tensor.
template <typename T>
Tensor<T> arange(std::size_t start, std::size_t stop) {
  if (stop <= start) throw DimensionError("arange: empty range");
  Tensor<T> out(Shape{stop - start});
  for (std::size_t i = start; i < stop; ++i) out[i - start] = T(i);
  return out;
}

// out_i = qw_i . sum_{j<=i} kf_j^T vw_j per head, using one running
// (e x e') state; inputs are n x h x e, n x h x e, n x h x e'.
template <typename T>
Tensor<T> causal_dot_product(const Tensor<T>& qw, const Tensor<T>& kf, const Tensor<T>& vw) {
  const Shape& qs = qw.shape();
  if (qs.rank() != 3 || !(kf.shape() == qs) || vw.rank() != 3 || vw.extent(0) != qs[0] ||
      vw.extent(1) != qs[1]) {
    throw DimensionError("causal_dot_product: incompatible shapes " + qs.str() + ", " + kf.shape().str() +
                         ", " + vw.shape().str());
  }
  const std::size_t n = qs[0], h = qs[1], e = qs[2], ev = vw.extent(2);
  Tensor<T> out(Shape{n, h, ev});
  std::vector<T> state(e * ev);
  for (std::size_t head = 0; head < h; ++head) {
    std::fill(state.begin(), state.end(), T(0));
    for (std::size_t i = 0; i < n; ++i) {
      const T* k = kf.data() + (i * h + head) * e;
      const T* v = vw.data() + (i * h + head) * ev;
      for (std::size_t a = 0; a < e; ++a)
        for (std::size_t b = 0; b < ev; ++b) state[a * ev + b] += k[a] * v[b];
      const T* q = qw.data() + (i * h + head) * e;
      T* o = out.data() + (i * h + head) * ev;
      for (std::size_t a = 0; a < e; ++a)
        for (std::size_t b = 0; b < ev; ++b) o[b] += q[a] * state[a * ev + b];
    }
  }
  return out;
}

// Sets entries above the diagonal of the trailing n x n block(s) to -inf.
template <typename T>
Tensor<T> causal_mask(const Tensor<T>& x) {
  if (x.rank() < 2 || x.extent(x.rank() - 1) != x.extent(x.rank() - 2)) {
    throw DimensionError("causal_mask: trailing axes must be square, got " + x.shape().str());
  }
  const std::size_t n = x.extent(x.rank() - 1);
  Tensor<T> out = x;
  for (std::size_t b = 0; b < x.size() / (n * n); ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) out[b * n * n + i * n + j] = -std::numeric_limits<T>::infinity();
  return out;
}

// Rows of `table` selected by `ids` (embedding lookup).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const std::int64_t> ids) {
  if (table.rank() != 2) throw DimensionError("gather_rows: table must be rank 2");
  if (ids.empty()) throw DimensionError("gather_rows: empty id list");
  const std::size_t rows = table.extent(0), d = table.extent(1);
  Tensor<T> out(Shape{ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DataError("gather_rows: id " + std::to_string(ids[i]) + " outside [0, " + std::to_string(rows) + ")");
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Comparison helpers
// ---------------------------------------------------------------------------

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
double max_rel_err(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-12) {
  detail::require_same_shape(a.shape(), b.shape(), "max_rel_err");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double den = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / den);
  }
  return worst;
}

template <typename T>
bool all_finite(const Tensor<T>& x) {
  return std::all_of(x.values().begin(), x.values().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace flowattn

#endif  // FLOWATTN_TENSOR_HPP_
