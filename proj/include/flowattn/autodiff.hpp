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

// Reverse-mode differentiation over the tensor primitives.
//
// A Tape records nodes in creation order, which is a topological order by
// construction. Each ad:: free function mirrors the Tensor overload of the
// same name, so generic code written against unqualified calls runs either
// eagerly on Tensor<T> or recorded on Var<T> via argument-dependent lookup.

#ifndef FLOWATTN_AUTODIFF_HPP_
#define FLOWATTN_AUTODIFF_HPP_

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "flowattn/tensor.hpp"

namespace flowattn::ad {

enum class Op {
  kLeaf,
  kParameter,
  kConstant,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kSigmoid,
  kExp,
  kRelu,
  kEluPlusOne,
  kGelu,
  kStableDiv,
  kSumAxis,
  kSumAll,
  kBroadcastAxis,
  kSoftmaxAxis,
  kCausalSoftmaxAxis,
  kCumsumAxis,
  kLayerNorm,
  kMatmul,
  kSwapAxes,
  kReshape,
  kCausalDotProduct,
  kCausalMask,
  kGatherRows,
  kCrossEntropy,
  kDropout,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kParameter: return "parameter";
    case Op::kConstant: return "constant";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddScalar: return "add_scalar";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kRelu: return "relu";
    case Op::kEluPlusOne: return "elu_plus_one";
    case Op::kGelu: return "gelu";
    case Op::kStableDiv: return "stable_div";
    case Op::kSumAxis: return "sum_axis";
    case Op::kSumAll: return "sum_all";
    case Op::kBroadcastAxis: return "broadcast_axis";
    case Op::kSoftmaxAxis: return "softmax_axis";
    case Op::kCausalSoftmaxAxis: return "causal_softmax_axis";
    case Op::kCumsumAxis: return "cumsum_axis";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kMatmul: return "matmul";
    case Op::kSwapAxes: return "swap_axes";
    case Op::kReshape: return "reshape";
    case Op::kCausalDotProduct: return "causal_dot_product";
    case Op::kCausalMask: return "causal_mask";
    case Op::kGatherRows: return "gather_rows";
    case Op::kCrossEntropy: return "cross_entropy";
    case Op::kDropout: return "dropout";
  }
  return "unknown";
}

template <typename T>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
 public:
  using value_type = T;

  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rank() const { return value().rank(); }
  std::size_t extent(std::size_t axis) const { return value().extent(axis); }
  std::size_t id() const { return id_; }
  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  struct Node {
    Op op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    std::string name;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Named differentiable leaf; its gradient is reported by backward().
  Var<T> parameter(std::string name, Tensor<T> value) {
    nodes_.push_back(Node{Op::kParameter, {}, std::move(value), {}, {}, std::move(name), true});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{Op::kConstant, {}, std::move(value), {}, {}, {}, false});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(Op op, std::vector<std::size_t> inputs, Tensor<T> value, Backward backward) {
    bool needs = false;
    for (std::size_t in : inputs) needs = needs || nodes_[in].requires_grad;
    nodes_.push_back(Node{op, std::move(inputs), std::move(value), {}, needs ? std::move(backward) : Backward{},
                          {}, needs});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor<T>& grad(std::size_t id) const { return nodes_[id].grad; }
  const Node& node(std::size_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  void accumulate(std::size_t id, Tensor<T> g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!(g.shape() == n.value.shape())) {
      throw InternalError(std::string("gradient shape ") + g.shape().str() + " does not match value " +
                          n.value.shape().str() + " at node " + op_name(n.op));
    }
    if (n.grad.empty()) {
      n.grad = std::move(g);
      return;
    }
    T* dst = n.grad.data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
  }

  // Runs the reverse sweep from a scalar loss and returns the gradient of
  // every named parameter (zeros when the loss does not depend on it).
  std::map<std::string, Tensor<T>> backward(const Var<T>& loss) {
    if (backward_done_) throw ContractError("backward: tape already consumed; record a new forward pass");
    if (loss.value().size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + loss.shape().str());
    }
    backward_done_ = true;
    accumulate(loss.id(), Tensor<T>(loss.shape(), T(1)));
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
    std::map<std::string, Tensor<T>> grads;
    for (Node& n : nodes_) {
      if (n.op != Op::kParameter) continue;
      grads[n.name] = n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad;
    }
    return grads;
  }

 private:
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// ---------------------------------------------------------------------------
// Generic-code helpers
// ---------------------------------------------------------------------------

template <typename T>
const Tensor<T>& value_of(const Var<T>& x) {
  return x.value();
}

// A non-differentiable tensor living on the same tape as `like`.
template <typename T>
Var<T> constant_like(const Var<T>& like, Tensor<T> t) {
  return like.tape().constant(std::move(t));
}

namespace detail {

template <typename T>
Tensor<T> zip_grad(const Tensor<T>& g, const Tensor<T>& a, auto f) {
  Tensor<T> out(g.shape());
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = f(g[i], a[i]);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Op::kAdd, {ia, ib}, flowattn::add(a.value(), b.value()), [ia, ib](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, t.grad(self));
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Op::kSub, {ia, ib}, flowattn::sub(a.value(), b.value()), [ia, ib](Tape<T>& t, std::size_t self) {
    t.accumulate(ia, t.grad(self));
    t.accumulate(ib, flowattn::scale(t.grad(self), T(-1)));
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Op::kMul, {ia, ib}, flowattn::mul(a.value(), b.value()), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.node(ia).requires_grad) t.accumulate(ia, flowattn::mul(g, t.value(ib)));
    if (t.node(ib).requires_grad) t.accumulate(ib, flowattn::mul(g, t.value(ia)));
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kScale, {ix}, flowattn::scale(x.value(), factor), [ix, factor](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, flowattn::scale(t.grad(self), factor));
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kAddScalar, {ix}, flowattn::add_scalar(x.value(), c),
                         [ix](Tape<T>& t, std::size_t self) { t.accumulate(ix, t.grad(self)); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kSigmoid, {ix}, flowattn::sigmoid(x.value()), [ix](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, detail::zip_grad(t.grad(self), t.value(self), [](T g, T y) { return g * y * (T(1) - y); }));
  });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kExp, {ix}, flowattn::exp(x.value()), [ix](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, flowattn::mul(t.grad(self), t.value(self)));
  });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kRelu, {ix}, flowattn::relu(x.value()), [ix](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, detail::zip_grad(t.grad(self), t.value(ix), [](T g, T v) { return v > T(0) ? g : T(0); }));
  });
}

template <typename T>
Var<T> elu_plus_one(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kEluPlusOne, {ix}, flowattn::elu_plus_one(x.value()), [ix](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& v = t.value(ix);
    const Tensor<T>& y = t.value(self);
    Tensor<T> dx(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] = v[i] > T(0) ? g[i] : g[i] * y[i];
    t.accumulate(ix, std::move(dx));
  });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kGelu, {ix}, flowattn::gelu(x.value()), [ix](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, detail::zip_grad(t.grad(self), t.value(ix), [](T g, T v) {
      constexpr T kC = T(0.7978845608028654);
      constexpr T kA = T(0.044715);
      const T th = std::tanh(kC * (v + kA * v * v * v));
      const T du = kC * (T(1) + T(3) * kA * v * v);
      return g * (T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * du);
    }));
  });
}

template <typename T>
Var<T> stable_div(const Var<T>& num, const Var<T>& den, T eps) {
  const std::size_t in = num.id(), id = den.id();
  return num.tape().record(
      Op::kStableDiv, {in, id}, flowattn::stable_div(num.value(), den.value(), eps),
      [in, id, eps](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& nv = t.value(in);
        const Tensor<T>& dv = t.value(id);
        const std::size_t inner = g.size() / dv.size();
        if (t.node(in).requires_grad) {
          Tensor<T> dn(nv.shape());
          for (std::size_t o = 0; o < dv.size(); ++o) {
            const T denom = dv[o] + eps;
            for (std::size_t i = 0; i < inner; ++i) dn[o * inner + i] = g[o * inner + i] / denom;
          }
          t.accumulate(in, std::move(dn));
        }
        if (t.node(id).requires_grad) {
          Tensor<T> dd(dv.shape());
          for (std::size_t o = 0; o < dv.size(); ++o) {
            const T denom = dv[o] + eps;
            T acc = T(0);
            for (std::size_t i = 0; i < inner; ++i) acc += g[o * inner + i] * nv[o * inner + i];
            dd[o] = -acc / (denom * denom);
          }
          t.accumulate(id, std::move(dd));
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and scans
// ---------------------------------------------------------------------------

template <typename T>
Var<T> sum_axis(const Var<T>& x, std::size_t axis) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kSumAxis, {ix}, flowattn::sum_axis(x.value(), axis), [ix, axis](Tape<T>& t, std::size_t self) {
    const Tensor<T>& xv = t.value(ix);
    if (xv.rank() == 1) {
      t.accumulate(ix, Tensor<T>(xv.shape(), t.grad(self)[0]));
    } else {
      t.accumulate(ix, flowattn::broadcast_axis(t.grad(self), axis, xv.extent(axis)));
    }
  });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kSumAll, {ix}, Tensor<T>::scalar(flowattn::sum_all(x.value())),
                         [ix](Tape<T>& t, std::size_t self) {
                           t.accumulate(ix, Tensor<T>(t.value(ix).shape(), t.grad(self)[0]));
                         });
}

template <typename T>
Var<T> broadcast_axis(const Var<T>& x, std::size_t axis, std::size_t extent) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kBroadcastAxis, {ix}, flowattn::broadcast_axis(x.value(), axis, extent),
                         [ix, axis](Tape<T>& t, std::size_t self) {
                           t.accumulate(ix, flowattn::sum_axis(t.grad(self), axis));
                         });
}

template <typename T>
Var<T> softmax_axis(const Var<T>& x, std::size_t axis) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kSoftmaxAxis, {ix}, flowattn::softmax_axis(x.value(), axis),
                         [ix, axis](Tape<T>& t, std::size_t self) {
                           const Tensor<T>& g = t.grad(self);
                           const Tensor<T>& y = t.value(self);
                           const auto [outer, len, inner] = flowattn::detail::axis_view(y.shape(), axis);
                           Tensor<T> dx(y.shape());
                           for (std::size_t o = 0; o < outer; ++o) {
                             for (std::size_t in = 0; in < inner; ++in) {
                               const std::size_t base = o * len * inner + in;
                               T dot = T(0);
                               for (std::size_t i = 0; i < len; ++i) dot += g[base + i * inner] * y[base + i * inner];
                               for (std::size_t i = 0; i < len; ++i) {
                                 const std::size_t k = base + i * inner;
                                 dx[k] = y[k] * (g[k] - dot);
                               }
                             }
                           }
                           t.accumulate(ix, std::move(dx));
                         });
}

// Adjoint of the prefix-normalized softmax. With p_t = exp(x_t - m_t)/S_t in
// the running-max frame m_t, the input gradient is
//   dx_k = g_k p_k - exp(x_k - m_k) * G_k,
//   G_k  = g_k p_k / S_k + exp(m_k - m_{k+1}) * G_{k+1},
// which only ever exponentiates non-positive numbers.
template <typename T>
Var<T> causal_softmax_axis(const Var<T>& x, std::size_t axis) {
  const std::size_t ix = x.id();
  return x.tape().record(
      Op::kCausalSoftmaxAxis, {ix}, flowattn::causal_softmax_axis(x.value(), axis),
      [ix, axis](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& p = t.value(self);
        const auto [outer, len, inner] = flowattn::detail::axis_view(xv.shape(), axis);
        Tensor<T> dx(xv.shape());
        std::vector<T> run_max(len), run_sum(len);
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            T sum = T(0);
            for (std::size_t k = 0; k < len; ++k) {
              const T v = xv[base + k * inner];
              if (v > mx) {
                sum *= std::exp(mx - v);
                mx = v;
              }
              sum += std::exp(v - mx);
              run_max[k] = mx;
              run_sum[k] = sum;
            }
            T acc = T(0);
            for (std::size_t k = len; k-- > 0;) {
              const std::size_t idx = base + k * inner;
              if (k + 1 < len) acc *= std::exp(run_max[k] - run_max[k + 1]);
              acc += g[idx] * p[idx] / run_sum[k];
              dx[idx] = g[idx] * p[idx] - std::exp(xv[idx] - run_max[k]) * acc;
            }
          }
        }
        t.accumulate(ix, std::move(dx));
      });
}

// The adjoint of an inclusive prefix sum is the reversed suffix sum.
template <typename T>
Tensor<T> reverse_cumsum_axis(const Tensor<T>& g, std::size_t axis) {
  const auto [outer, len, inner] = flowattn::detail::axis_view(g.shape(), axis);
  Tensor<T> dx(g.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    const std::size_t base = o * len * inner;
    std::copy_n(g.data() + base + (len - 1) * inner, inner, dx.data() + base + (len - 1) * inner);
    for (std::size_t i = len - 1; i-- > 0;)
      for (std::size_t in = 0; in < inner; ++in)
        dx[base + i * inner + in] = dx[base + (i + 1) * inner + in] + g[base + i * inner + in];
  }
  return dx;
}

template <typename T>
Var<T> cumsum_axis(const Var<T>& x, std::size_t axis) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kCumsumAxis, {ix}, flowattn::cumsum_axis(x.value(), axis),
                         [ix, axis](Tape<T>& t, std::size_t self) {
                           t.accumulate(ix, reverse_cumsum_axis(t.grad(self), axis));
                         });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().record(
      Op::kLayerNorm, {ix, ig, ib}, flowattn::layer_norm(x.value(), gamma.value(), beta.value(), eps),
      [ix, ig, ib, eps](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& xv = t.value(ix);
        const Tensor<T>& gv = t.value(ig);
        const std::size_t d = xv.extent(xv.rank() - 1);
        const std::size_t rows = xv.size() / d;
        Tensor<T> dx(xv.shape()), dgamma(gv.shape()), dbeta(gv.shape());
        std::vector<T> xhat(d), dxhat(d);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* row = xv.data() + r * d;
          const T* grow = g.data() + r * d;
          T mean = T(0);
          for (std::size_t c = 0; c < d; ++c) mean += row[c];
          mean /= T(d);
          T var = T(0);
          for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
          var /= T(d);
          const T inv_std = T(1) / std::sqrt(var + eps);
          T mean_dxhat = T(0), mean_dxhat_xhat = T(0);
          for (std::size_t c = 0; c < d; ++c) {
            xhat[c] = (row[c] - mean) * inv_std;
            dxhat[c] = grow[c] * gv[c];
            dgamma[c] += grow[c] * xhat[c];
            dbeta[c] += grow[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xhat[c];
          }
          mean_dxhat /= T(d);
          mean_dxhat_xhat /= T(d);
          T* drow = dx.data() + r * d;
          for (std::size_t c = 0; c < d; ++c) drow[c] = inv_std * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
        t.accumulate(ix, std::move(dx));
        t.accumulate(ig, std::move(dgamma));
        t.accumulate(ib, std::move(dbeta));
      });
}

// ---------------------------------------------------------------------------
// Contractions and layout
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(Op::kMatmul, {ia, ib}, flowattn::matmul(a.value(), b.value()), [ia, ib](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.node(ia).requires_grad) t.accumulate(ia, flowattn::matmul(g, flowattn::transpose_last2(t.value(ib))));
    if (t.node(ib).requires_grad) t.accumulate(ib, flowattn::matmul(flowattn::transpose_last2(t.value(ia)), g));
  });
}

template <typename T>
Var<T> swap_axes(const Var<T>& x, std::size_t a, std::size_t b) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kSwapAxes, {ix}, flowattn::swap_axes(x.value(), a, b), [ix, a, b](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, flowattn::swap_axes(t.grad(self), a, b));
  });
}

template <typename T>
Var<T> transpose_last2(const Var<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last2: rank must be >= 2, got " + x.shape().str());
  return swap_axes(x, x.rank() - 2, x.rank() - 1);
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kReshape, {ix}, x.value().reshaped(shape), [ix](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, t.grad(self).reshaped(t.value(ix).shape()));
  });
}

template <typename T>
Var<T> split_heads(const Var<T>& x, std::size_t heads) {
  return reshape(x, flowattn::split_heads(x.value(), heads).shape());
}

template <typename T>
Var<T> merge_heads(const Var<T>& x) {
  return reshape(x, flowattn::merge_heads(x.value()).shape());
}

// Backward of the running-state product:
//   dqw_i = S_i g_i with S_i = sum_{j<=i} kf_j^T vw_j,
//   dkf_j = G_j vw_j and dvw_j = G_j^T kf_j with G_j = sum_{i>=j} qw_i^T g_i.
template <typename T>
Var<T> causal_dot_product(const Var<T>& qw, const Var<T>& kf, const Var<T>& vw) {
  const std::size_t iq = qw.id(), ik = kf.id(), iv = vw.id();
  return qw.tape().record(
      Op::kCausalDotProduct, {iq, ik, iv}, flowattn::causal_dot_product(qw.value(), kf.value(), vw.value()),
      [iq, ik, iv](Tape<T>& t, std::size_t self) {
        const Tensor<T>& g = t.grad(self);
        const Tensor<T>& q = t.value(iq);
        const Tensor<T>& k = t.value(ik);
        const Tensor<T>& v = t.value(iv);
        const std::size_t n = q.extent(0), h = q.extent(1), e = q.extent(2), ev = v.extent(2);
        Tensor<T> dq(q.shape()), dk(k.shape()), dv(v.shape());
        std::vector<T> state(e * ev);
        for (std::size_t head = 0; head < h; ++head) {
          std::fill(state.begin(), state.end(), T(0));
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t qo = (i * h + head) * e, vo = (i * h + head) * ev;
            for (std::size_t a = 0; a < e; ++a)
              for (std::size_t b = 0; b < ev; ++b) state[a * ev + b] += k[qo + a] * v[vo + b];
            for (std::size_t a = 0; a < e; ++a) {
              T acc = T(0);
              for (std::size_t b = 0; b < ev; ++b) acc += state[a * ev + b] * g[vo + b];
              dq[qo + a] = acc;
            }
          }
          std::fill(state.begin(), state.end(), T(0));
          for (std::size_t j = n; j-- > 0;) {
            const std::size_t ko = (j * h + head) * e, vo = (j * h + head) * ev;
            for (std::size_t a = 0; a < e; ++a)
              for (std::size_t b = 0; b < ev; ++b) state[a * ev + b] += q[ko + a] * g[vo + b];
            for (std::size_t a = 0; a < e; ++a) {
              T acc = T(0);
              for (std::size_t b = 0; b < ev; ++b) acc += state[a * ev + b] * v[vo + b];
              dk[ko + a] = acc;
            }
            for (std::size_t b = 0; b < ev; ++b) {
              T acc = T(0);
              for (std::size_t a = 0; a < e; ++a) acc += state[a * ev + b] * k[ko + a];
              dv[vo + b] = acc;
            }
          }
        }
        t.accumulate(iq, std::move(dq));
        t.accumulate(ik, std::move(dk));
        t.accumulate(iv, std::move(dv));
      });
}

template <typename T>
Var<T> causal_mask(const Var<T>& x) {
  const std::size_t ix = x.id();
  return x.tape().record(Op::kCausalMask, {ix}, flowattn::causal_mask(x.value()), [ix](Tape<T>& t, std::size_t self) {
    Tensor<T> dx = t.grad(self);
    const std::size_t n = dx.extent(dx.rank() - 1);
    for (std::size_t b = 0; b < dx.size() / (n * n); ++b)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) dx[b * n * n + i * n + j] = T(0);
    t.accumulate(ix, std::move(dx));
  });
}

template <typename T>
Var<T> gather_rows(const Var<T>& table, std::span<const std::int64_t> ids) {
  const std::size_t it = table.id();
  std::vector<std::int64_t> saved(ids.begin(), ids.end());
  return table.tape().record(Op::kGatherRows, {it}, flowattn::gather_rows(table.value(), ids),
                             [it, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
                               const Tensor<T>& g = t.grad(self);
                               Tensor<T> dt(t.value(it).shape());
                               const std::size_t d = dt.extent(1);
                               for (std::size_t i = 0; i < saved.size(); ++i) {
                                 T* dst = dt.data() + static_cast<std::size_t>(saved[i]) * d;
                                 const T* src = g.data() + i * d;
                                 for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
                               }
                               t.accumulate(it, std::move(dt));
                             });
}

// Inverted dropout with a caller-supplied keep mask already scaled by
// 1/(1 - rate).
template <typename T>
Var<T> dropout(const Var<T>& x, Tensor<T> scaled_mask) {
  const std::size_t ix = x.id();
  Tensor<T> y = flowattn::mul(x.value(), scaled_mask);
  return x.tape().record(Op::kDropout, {ix}, std::move(y), [ix, m = std::move(scaled_mask)](Tape<T>& t, std::size_t self) {
    t.accumulate(ix, flowattn::mul(t.grad(self), m));
  });
}

}  // namespace flowattn::ad

namespace flowattn {

template <typename T>
const Tensor<T>& value_of(const Tensor<T>& x) {
  return x;
}

template <typename T>
Tensor<T> constant_like(const Tensor<T>&, Tensor<T> t) {
  return t;
}

}  // namespace flowattn

#endif  // FLOWATTN_AUTODIFF_HPP_
