#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "vitst/common.hpp"

namespace vitst {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s);

// When enabled, every kernel scans its output for NaN/Inf and fails loudly.
void set_debug_check_finite(bool on);
bool debug_check_finite();

// Raw row-major GEMM kernels (C accumulates). Rows of C are partitioned
// across workers; each element is produced by exactly one thread with a
// fixed-order k loop, so results are identical at every thread count.
void gemm_nn(size_t m, size_t k, size_t n, const float* a, const float* b, float* c);
void gemm_nn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c);

template <typename T>
struct TensorImplT {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // sized iff requires_grad
  bool requires_grad = false;
};

template <typename T>
class TensorT {
public:
  using Impl = TensorImplT<T>;

  TensorT() = default;

  static TensorT zeros(Shape shape, bool requires_grad = false) {
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(shape_numel(t.impl_->shape), T(0));
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT full(Shape shape, T value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (T& v : t.impl_->data) v = value;
    return t;
  }

  static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
    if (shape_numel(shape) != data.size()) fail("tensor: data length does not match shape");
    TensorT t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.set_requires_grad(requires_grad);
    return t;
  }

  static TensorT scalar(T value, bool requires_grad = false) {
    return from_data({1}, {value}, requires_grad);
  }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  size_t numel() const { return impl_->data.size(); }
  size_t dim(size_t i) const { return impl_->shape.at(i); }
  size_t rank() const { return impl_->shape.size(); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  std::vector<T>& grad() {
    if (!impl_->requires_grad) fail("tensor: grad requested but requires_grad is false");
    return impl_->grad;
  }
  const std::vector<T>& grad() const {
    if (!impl_->requires_grad) fail("tensor: grad requested but requires_grad is false");
    return impl_->grad;
  }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) {
    impl_->requires_grad = rg;
    if (rg)
      impl_->grad.assign(impl_->data.size(), T(0));
    else
      impl_->grad.clear();
  }
  void zero_grad() {
    if (impl_->requires_grad) impl_->grad.assign(impl_->data.size(), T(0));
  }

  T item() const {
    if (numel() != 1) fail("tensor: item() on non-scalar of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// Reverse-mode tape: ops append their backward closures in execution order
// (a topological order of the graph); backward() replays them once, in
// reverse.
template <typename T>
class TapeT {
public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void mark_consumed() { consumed_ = true; }
  void clear() {
    nodes_.clear();
    consumed_ = false;
  }
  const std::vector<std::function<void()>>& nodes() const { return nodes_; }

private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

template <typename T>
TapeT<T>*& active_tape() {
  thread_local TapeT<T>* tape = nullptr;
  return tape;
}

// RAII activation: ops record onto `tape` while the scope is alive.
template <typename T>
class TapeScopeT {
public:
  explicit TapeScopeT(TapeT<T>& tape) : prev_(active_tape<T>()) { active_tape<T>() = &tape; }
  ~TapeScopeT() { active_tape<T>() = prev_; }
  TapeScopeT(const TapeScopeT&) = delete;
  TapeScopeT& operator=(const TapeScopeT&) = delete;

private:
  TapeT<T>* prev_;
};

using TapeScope = TapeScopeT<float>;
using TapeScope64 = TapeScopeT<double>;

// Populates grads of every requires_grad leaf reachable from `loss`.
template <typename T>
void backward(TapeT<T>& tape, const TensorT<T>& loss);

// ---- kernels -------------------------------------------------------------

template <typename T> TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> scale(const TensorT<T>& a, double c);
// x: (..., C) plus bias (C), the one supported broadcast.
template <typename T> TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias);
template <typename T> TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b);
// Batched (B,M,K) x (B,K,N); bmm_nt computes a · b^T with b (B,N,K).
template <typename T> TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> bmm_nt(const TensorT<T>& a, const TensorT<T>& b);
template <typename T> TensorT<T> transpose2d(const TensorT<T>& a);
template <typename T> TensorT<T> permute(const TensorT<T>& a, const std::vector<size_t>& axes);
template <typename T> TensorT<T> reshape(const TensorT<T>& a, Shape new_shape);
template <typename T> TensorT<T> concat(const std::vector<TensorT<T>>& parts, size_t axis);
template <typename T> TensorT<T> slice(const TensorT<T>& a, const std::vector<size_t>& offsets,
                                       const std::vector<size_t>& sizes);
template <typename T> TensorT<T> mean_all(const TensorT<T>& a);
template <typename T> TensorT<T> sum_all(const TensorT<T>& a);
template <typename T> TensorT<T> mean_axis(const TensorT<T>& a, size_t axis);
template <typename T> TensorT<T> abs_val(const TensorT<T>& a);
template <typename T> TensorT<T> softmax_lastdim(const TensorT<T>& a);
template <typename T> TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma,
                                            const TensorT<T>& beta, double eps = 1e-5);
template <typename T> TensorT<T> gelu(const TensorT<T>& x, bool exact_erf = false);
template <typename T> TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                                        const TensorT<T>& b);
template <typename T> TensorT<T> embedding_lookup(const TensorT<T>& table,
                                                  const std::vector<size_t>& ids);
template <typename T> TensorT<T> cross_entropy(const TensorT<T>& logits,
                                               const std::vector<size_t>& labels);
// Cyclic shift of (B,H,W,C) along H and W.
template <typename T> TensorT<T> roll2d(const TensorT<T>& x, long shift_h, long shift_w);
// Zero rows/cols appended at the bottom/right of (B,H,W,C).
template <typename T> TensorT<T> pad_hw(const TensorT<T>& x, size_t add_h, size_t add_w);
// x: (G,L,L) with G = B*nW*nh; adds bias[g % nh] to slab g (bias learned).
template <typename T> TensorT<T> add_head_bias(const TensorT<T>& x, const TensorT<T>& bias,
                                               size_t num_heads);
// x: (G,L,L); adds constant mask[(g / nh) % nW] to slab g (no grad to mask).
template <typename T> TensorT<T> add_window_mask(const TensorT<T>& x, const TensorT<T>& mask,
                                                 size_t num_heads);
// Elementwise product with a constant (no grad flows to m).
template <typename T> TensorT<T> mul_const(const TensorT<T>& x, const TensorT<T>& m);

// ---- optimizer ------------------------------------------------------------

template <typename T>
struct AdamWStateT {
  size_t step = 0;
  std::vector<std::vector<T>> m, v;
};

using AdamWState = AdamWStateT<float>;

// Decoupled weight decay, bias-corrected moments. Reads param.grad().
template <typename T>
void adamw_step(std::vector<TensorT<T>>& params, AdamWStateT<T>& state, double lr,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                double weight_decay = 0.01);

// ---- verification -----------------------------------------------------

// Central-difference check of autodiff gradients (64-bit only); returns the
// max relative error max_i |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-8).
double grad_check(
    const std::function<Tensor64(const std::vector<Tensor64>&)>& f,
    std::vector<Tensor64> inputs, double eps = 1e-4);

// ---- checkpoint io -------------------------------------------------------

// Flat binary format: magic/version, a text section (configuration echo),
// then a table of named tensors with little-endian payloads.
template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, TensorT<T>>>& tensors);

template <typename T>
void load_checkpoint(const std::string& path, std::string& config_text,
                     std::vector<std::pair<std::string, TensorT<T>>>& tensors);

}  // namespace vitst
