#include "vitst/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>
#include <fstream>
#include <limits>

#include "vitst/parallel.hpp"

namespace vitst {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

namespace {

std::atomic<bool> g_check_finite{false};

template <typename T>
void finish_op(const TensorT<T>& out) {
  if (!g_check_finite.load(std::memory_order_relaxed)) return;
  for (T v : out.data())
    if (!std::isfinite(static_cast<double>(v))) fail("tensor: non-finite value produced");
}

template <typename T>
void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
  if (a.shape() != b.shape())
    fail(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
         shape_str(b.shape()));
}

template <typename T>
bool start_grad(const TensorT<T>& out, std::initializer_list<bool> input_grads) {
  if (!active_tape<T>()) return false;
  bool any = false;
  for (bool g : input_grads) any = any || g;
  if (any) const_cast<TensorT<T>&>(out).set_requires_grad(true);
  return any;
}

template <typename T>
std::vector<size_t> strides_of(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

template <typename T>
std::vector<T> transpose_raw(const T* src, size_t rows, size_t cols) {
  std::vector<T> out(rows * cols);
  for (size_t r = 0; r < rows; ++r)
    for (size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  return out;
}

template <typename T>
void gemm_nn_impl(size_t m, size_t k, size_t n, const T* a, const T* b, T* c) {
  auto row = [&](size_t i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + p * n;
      for (size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  };
  if (max_threads() > 1 && m > 1 && m * k * n > (1u << 16)) {
    parallel_for(m, row);
  } else {
    for (size_t i = 0; i < m; ++i) row(i);
  }
}

}  // namespace

void set_debug_check_finite(bool on) { g_check_finite.store(on); }
bool debug_check_finite() { return g_check_finite.load(); }

void gemm_nn(size_t m, size_t k, size_t n, const float* a, const float* b, float* c) {
  gemm_nn_impl(m, k, n, a, b, c);
}
void gemm_nn(size_t m, size_t k, size_t n, const double* a, const double* b, double* c) {
  gemm_nn_impl(m, k, n, a, b, c);
}

template <typename T>
void backward(TapeT<T>& tape, const TensorT<T>& loss) {
  if (loss.numel() != 1) fail("backward: loss must be a scalar, got " + shape_str(loss.shape()));
  if (tape.consumed()) fail("backward: tape already consumed; reset it first");
  if (!loss.requires_grad()) fail("backward: loss is not attached to the tape");
  tape.mark_consumed();
  loss.impl()->grad[0] += T(1);
  const auto& nodes = tape.nodes();
  for (size_t i = nodes.size(); i-- > 0;) nodes[i]();
}

// ---- elementwise ----------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "add");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, n] {
      if (ai->requires_grad)
        for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "sub");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, n] {
      if (ai->requires_grad)
        for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < n; ++i) bi->grad[i] -= oi->grad[i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  check_same_shape(a, b, "mul");
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, n] {
      if (ai->requires_grad)
        for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->data[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->data[i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> scale(const TensorT<T>& a, double c) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  const size_t n = a.numel();
  const T cv = static_cast<T>(c);
  for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * cv;
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, n, cv] {
      for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * cv;
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> mul_const(const TensorT<T>& x, const TensorT<T>& m) {
  check_same_shape(x, m, "mul_const");
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const size_t n = x.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * m.data()[i];
  if (start_grad(out, {x.requires_grad()})) {
    auto xi = x.impl(), mi = m.impl(), oi = out.impl();
    active_tape<T>()->record([xi, mi, oi, n] {
      for (size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * mi->data[i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> add_bias(const TensorT<T>& x, const TensorT<T>& bias) {
  if (bias.rank() != 1 || x.rank() < 1 || x.shape().back() != bias.dim(0))
    fail("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  const size_t c = bias.dim(0);
  const size_t rows = x.numel() / c;
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  for (size_t r = 0; r < rows; ++r)
    for (size_t j = 0; j < c; ++j) out.data()[r * c + j] = x.data()[r * c + j] + bias.data()[j];
  if (start_grad(out, {x.requires_grad(), bias.requires_grad()})) {
    auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
    active_tape<T>()->record([xi, bi, oi, rows, c] {
      if (xi->requires_grad)
        for (size_t i = 0; i < rows * c; ++i) xi->grad[i] += oi->grad[i];
      if (bi->requires_grad)
        for (size_t r = 0; r < rows; ++r)
          for (size_t j = 0; j < c; ++j) bi->grad[j] += oi->grad[r * c + j];
    });
  }
  finish_op(out);
  return out;
}

// ---- matmul ----------------------------------------------------------------

template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    fail("matmul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  TensorT<T> out = TensorT<T>::zeros({m, n});
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data().data());
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, m, k, n] {
      if (ai->requires_grad) {
        std::vector<T> bt = transpose_raw(bi->data.data(), k, n);  // (n,k)
        gemm_nn(m, n, k, oi->grad.data(), bt.data(), ai->grad.data());
      }
      if (bi->requires_grad) {
        std::vector<T> at = transpose_raw(ai->data.data(), m, k);  // (k,m)
        gemm_nn(k, m, n, at.data(), oi->grad.data(), bi->grad.data());
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> bmm(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    fail("bmm: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  TensorT<T> out = TensorT<T>::zeros({g, m, n});
  for (size_t i = 0; i < g; ++i)
    gemm_nn(m, k, n, a.data().data() + i * m * k, b.data().data() + i * k * n,
            out.data().data() + i * m * n);
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, g, m, k, n] {
      for (size_t i = 0; i < g; ++i) {
        const T* go = oi->grad.data() + i * m * n;
        if (ai->requires_grad) {
          std::vector<T> bt = transpose_raw(bi->data.data() + i * k * n, k, n);
          gemm_nn(m, n, k, go, bt.data(), ai->grad.data() + i * m * k);
        }
        if (bi->requires_grad) {
          std::vector<T> at = transpose_raw(ai->data.data() + i * m * k, m, k);
          gemm_nn(k, m, n, at.data(), go, bi->grad.data() + i * k * n);
        }
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> bmm_nt(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    fail("bmm_nt: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const size_t g = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(1);
  TensorT<T> out = TensorT<T>::zeros({g, m, n});
  for (size_t i = 0; i < g; ++i) {
    std::vector<T> bt = transpose_raw(b.data().data() + i * n * k, n, k);  // (k,n)
    gemm_nn(m, k, n, a.data().data() + i * m * k, bt.data(), out.data().data() + i * m * n);
  }
  if (start_grad(out, {a.requires_grad(), b.requires_grad()})) {
    auto ai = a.impl(), bi = b.impl(), oi = out.impl();
    active_tape<T>()->record([ai, bi, oi, g, m, k, n] {
      for (size_t i = 0; i < g; ++i) {
        const T* go = oi->grad.data() + i * m * n;
        if (ai->requires_grad)
          gemm_nn(m, n, k, go, bi->data.data() + i * n * k, ai->grad.data() + i * m * k);
        if (bi->requires_grad) {
          std::vector<T> gt = transpose_raw(go, m, n);  // (n,m)
          gemm_nn(n, m, k, gt.data(), ai->data.data() + i * m * k, bi->grad.data() + i * n * k);
        }
      }
    });
  }
  finish_op(out);
  return out;
}

// ---- layout ops -------------------------------------------------------------

template <typename T>
TensorT<T> transpose2d(const TensorT<T>& a) {
  if (a.rank() != 2) fail("transpose2d: expected rank 2, got " + shape_str(a.shape()));
  return permute(a, {1, 0});
}

template <typename T>
TensorT<T> permute(const TensorT<T>& a, const std::vector<size_t>& axes) {
  const size_t r = a.rank();
  if (axes.size() != r) fail("permute: axes length mismatch for " + shape_str(a.shape()));
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    if (axes[i] >= r || seen[axes[i]]) fail("permute: invalid axes");
    seen[axes[i]] = true;
    out_shape[i] = a.dim(axes[i]);
  }
  const auto in_strides = strides_of<T>(a.shape());
  const size_t n = a.numel();
  // in_flat(out_flat) decomposition strides
  std::vector<size_t> coef(r);
  for (size_t i = 0; i < r; ++i) coef[i] = in_strides[axes[i]];
  const auto out_strides = strides_of<T>(out_shape);

  TensorT<T> out = TensorT<T>::zeros(out_shape);
  auto map_index = [out_strides, coef, r](size_t o) {
    size_t rem = o, in_flat = 0;
    for (size_t i = 0; i < r; ++i) {
      size_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      in_flat += c * coef[i];
    }
    return in_flat;
  };
  for (size_t o = 0; o < n; ++o) out.data()[o] = a.data()[map_index(o)];
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, map_index, n] {
      for (size_t o = 0; o < n; ++o) ai->grad[map_index(o)] += oi->grad[o];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.numel())
    fail("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
         shape_str(new_shape));
  TensorT<T> out = TensorT<T>::from_data(std::move(new_shape), a.data());
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    const size_t n = a.numel();
    active_tape<T>()->record([ai, oi, n] {
      for (size_t i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, size_t axis) {
  if (parts.empty()) fail("concat: no inputs");
  const size_t r = parts[0].rank();
  if (axis >= r) fail("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  size_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) fail("concat: rank mismatch");
    for (size_t i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != out_shape[i])
        fail("concat: shape mismatch " + shape_str(p.shape()) + " vs " + shape_str(out_shape));
    axis_total += p.dim(axis);
  }
  out_shape[axis] = axis_total;

  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (size_t i = axis + 1; i < r; ++i) inner *= out_shape[i];

  TensorT<T> out = TensorT<T>::zeros(out_shape);
  size_t offset = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    const size_t block = p.dim(axis) * inner;
    for (size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * block, block,
                  out.data().data() + o * axis_total * inner + offset);
    offset += block;
    any_grad = any_grad || p.requires_grad();
  }
  if (active_tape<T>() && any_grad) {
    const_cast<TensorT<T>&>(out).set_requires_grad(true);
    std::vector<std::shared_ptr<TensorImplT<T>>> impls;
    std::vector<size_t> blocks;
    for (const auto& p : parts) {
      impls.push_back(p.impl());
      blocks.push_back(p.dim(axis) * inner);
    }
    auto oi = out.impl();
    const size_t stride = axis_total * inner;
    active_tape<T>()->record([impls, blocks, oi, outer, stride] {
      size_t off = 0;
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        if (impls[pi]->requires_grad) {
          for (size_t o = 0; o < outer; ++o)
            for (size_t i = 0; i < blocks[pi]; ++i)
              impls[pi]->grad[o * blocks[pi] + i] += oi->grad[o * stride + off + i];
        }
        off += blocks[pi];
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> slice(const TensorT<T>& a, const std::vector<size_t>& offsets,
                 const std::vector<size_t>& sizes) {
  const size_t r = a.rank();
  if (offsets.size() != r || sizes.size() != r) fail("slice: offsets/sizes rank mismatch");
  for (size_t i = 0; i < r; ++i)
    if (offsets[i] + sizes[i] > a.dim(i))
      fail("slice: out of bounds on axis " + std::to_string(i) + " for " + shape_str(a.shape()));
  Shape out_shape(sizes);
  const auto in_strides = strides_of<T>(a.shape());
  const auto out_strides = strides_of<T>(out_shape);
  const size_t n = shape_numel(out_shape);

  auto map_index = [in_strides, out_strides, offsets, r](size_t o) {
    size_t rem = o, in_flat = 0;
    for (size_t i = 0; i < r; ++i) {
      size_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      in_flat += (c + offsets[i]) * in_strides[i];
    }
    return in_flat;
  };

  TensorT<T> out = TensorT<T>::zeros(out_shape);
  for (size_t o = 0; o < n; ++o) out.data()[o] = a.data()[map_index(o)];
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, map_index, n] {
      for (size_t o = 0; o < n; ++o) ai->grad[map_index(o)] += oi->grad[o];
    });
  }
  finish_op(out);
  return out;
}

// ---- reductions -------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
  T s = 0;
  for (T v : a.data()) s += v;  // fixed sequential order
  TensorT<T> out = TensorT<T>::scalar(s);
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi] {
      const T g = oi->grad[0];
      for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += g;
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
  if (a.numel() == 0) fail("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

template <typename T>
TensorT<T> mean_axis(const TensorT<T>& a, size_t axis) {
  const size_t r = a.rank();
  if (axis >= r) fail("mean_axis: axis out of range for " + shape_str(a.shape()));
  const size_t an = a.dim(axis);
  if (an == 0) fail("mean_axis: empty axis");
  size_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (size_t i = axis + 1; i < r; ++i) inner *= a.dim(i);
  Shape out_shape;
  for (size_t i = 0; i < r; ++i)
    if (i != axis) out_shape.push_back(a.dim(i));
  if (out_shape.empty()) out_shape = {1};

  TensorT<T> out = TensorT<T>::zeros(out_shape);
  const T invn = static_cast<T>(1.0 / static_cast<double>(an));
  for (size_t o = 0; o < outer; ++o)
    for (size_t j = 0; j < an; ++j)
      for (size_t i = 0; i < inner; ++i)
        out.data()[o * inner + i] += a.data()[(o * an + j) * inner + i];
  for (T& v : out.data()) v *= invn;

  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, outer, an, inner, invn] {
      for (size_t o = 0; o < outer; ++o)
        for (size_t j = 0; j < an; ++j)
          for (size_t i = 0; i < inner; ++i)
            ai->grad[(o * an + j) * inner + i] += oi->grad[o * inner + i] * invn;
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> abs_val(const TensorT<T>& a) {
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  const size_t n = a.numel();
  for (size_t i = 0; i < n; ++i) out.data()[i] = std::abs(a.data()[i]);
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, n] {
      for (size_t i = 0; i < n; ++i) {
        T s = ai->data[i] > T(0) ? T(1) : (ai->data[i] < T(0) ? T(-1) : T(0));
        ai->grad[i] += oi->grad[i] * s;
      }
    });
  }
  finish_op(out);
  return out;
}

// ---- nonlinearities ----------------------------------------------------------

template <typename T>
TensorT<T> softmax_lastdim(const TensorT<T>& a) {
  if (a.rank() < 1) fail("softmax: rank must be >= 1");
  const size_t c = a.shape().back();
  const size_t rows = a.numel() / c;
  TensorT<T> out = TensorT<T>::zeros(a.shape());
  for (size_t r = 0; r < rows; ++r) {
    const T* x = a.data().data() + r * c;
    T* y = out.data().data() + r * c;
    T mx = x[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = 0;
    for (size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    const T inv = T(1) / sum;
    for (size_t j = 0; j < c; ++j) y[j] *= inv;
  }
  if (start_grad(out, {a.requires_grad()})) {
    auto ai = a.impl(), oi = out.impl();
    active_tape<T>()->record([ai, oi, rows, c] {
      for (size_t r = 0; r < rows; ++r) {
        const T* y = oi->data.data() + r * c;
        const T* g = oi->grad.data() + r * c;
        T dot = 0;
        for (size_t j = 0; j < c; ++j) dot += g[j] * y[j];
        for (size_t j = 0; j < c; ++j) ai->grad[r * c + j] += y[j] * (g[j] - dot);
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gamma, const TensorT<T>& beta,
                      double eps) {
  const size_t c = x.shape().back();
  if (gamma.rank() != 1 || beta.rank() != 1 || gamma.dim(0) != c || beta.dim(0) != c)
    fail("layer_norm: scale/shift must be (" + std::to_string(c) + ")");
  const size_t rows = x.numel() / c;
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  std::vector<T> means(rows), rstds(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* xi = x.data().data() + r * c;
    T mean = 0;
    for (size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (size_t j = 0; j < c; ++j) var += (xi[j] - mean) * (xi[j] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
    means[r] = mean;
    rstds[r] = rstd;
    T* y = out.data().data() + r * c;
    for (size_t j = 0; j < c; ++j)
      y[j] = (xi[j] - mean) * rstd * gamma.data()[j] + beta.data()[j];
  }
  if (start_grad(out, {x.requires_grad(), gamma.requires_grad(), beta.requires_grad()})) {
    auto xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    active_tape<T>()->record([xi, gi, bi, oi, rows, c, means, rstds] {
      for (size_t r = 0; r < rows; ++r) {
        const T* xd = xi->data.data() + r * c;
        const T* g = oi->grad.data() + r * c;
        const T mean = means[r], rstd = rstds[r];
        if (gi->requires_grad || bi->requires_grad) {
          for (size_t j = 0; j < c; ++j) {
            const T xhat = (xd[j] - mean) * rstd;
            if (gi->requires_grad) gi->grad[j] += g[j] * xhat;
            if (bi->requires_grad) bi->grad[j] += g[j];
          }
        }
        if (xi->requires_grad) {
          T sum_gh = 0, sum_ghx = 0;
          for (size_t j = 0; j < c; ++j) {
            const T xhat = (xd[j] - mean) * rstd;
            const T gh = g[j] * gi->data[j];
            sum_gh += gh;
            sum_ghx += gh * xhat;
          }
          const T invc = T(1) / static_cast<T>(c);
          for (size_t j = 0; j < c; ++j) {
            const T xhat = (xd[j] - mean) * rstd;
            const T gh = g[j] * gi->data[j];
            xi->grad[r * c + j] += rstd * (gh - invc * sum_gh - xhat * invc * sum_ghx);
          }
        }
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> gelu(const TensorT<T>& x, bool exact_erf) {
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  const size_t n = x.numel();
  if (exact_erf) {
    for (size_t i = 0; i < n; ++i) {
      const T v = x.data()[i];
      out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
    }
  } else {
    const T k = static_cast<T>(std::sqrt(2.0 / M_PI));
    for (size_t i = 0; i < n; ++i) {
      const T v = x.data()[i];
      const T u = k * (v + static_cast<T>(0.044715) * v * v * v);
      out.data()[i] = T(0.5) * v * (T(1) + std::tanh(u));
    }
  }
  if (start_grad(out, {x.requires_grad()})) {
    auto xi = x.impl(), oi = out.impl();
    active_tape<T>()->record([xi, oi, n, exact_erf] {
      if (exact_erf) {
        const T inv_sqrt2pi = static_cast<T>(1.0 / std::sqrt(2.0 * M_PI));
        for (size_t i = 0; i < n; ++i) {
          const T v = xi->data[i];
          const T cdf = T(0.5) * (T(1) + std::erf(v * static_cast<T>(M_SQRT1_2)));
          const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
          xi->grad[i] += oi->grad[i] * (cdf + v * pdf);
        }
      } else {
        const T k = static_cast<T>(std::sqrt(2.0 / M_PI));
        for (size_t i = 0; i < n; ++i) {
          const T v = xi->data[i];
          const T u = k * (v + static_cast<T>(0.044715) * v * v * v);
          const T th = std::tanh(u);
          const T sech2 = T(1) - th * th;
          const T du = k * (T(1) + static_cast<T>(3.0 * 0.044715) * v * v);
          xi->grad[i] += oi->grad[i] * (T(0.5) * (T(1) + th) + T(0.5) * v * sech2 * du);
        }
      }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
  if (w.rank() != 2) fail("linear: weight must be rank 2");
  const size_t in = w.dim(0);
  if (x.shape().back() != in)
    fail("linear: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(w.shape()));
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  TensorT<T> x2 = reshape(x, {x.numel() / in, in});
  TensorT<T> y = matmul(x2, w);
  if (b.defined()) y = add_bias(y, b);
  return reshape(y, std::move(out_shape));
}

template <typename T>
TensorT<T> embedding_lookup(const TensorT<T>& table, const std::vector<size_t>& ids) {
  if (table.rank() != 2) fail("embedding_lookup: table must be rank 2");
  const size_t v = table.dim(0), c = table.dim(1);
  TensorT<T> out = TensorT<T>::zeros({ids.size(), c});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) fail("embedding_lookup: id out of range");
    std::copy_n(table.data().data() + ids[i] * c, c, out.data().data() + i * c);
  }
  if (start_grad(out, {table.requires_grad()})) {
    auto ti = table.impl(), oi = out.impl();
    active_tape<T>()->record([ti, oi, ids, c] {
      for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < c; ++j) ti->grad[ids[i] * c + j] += oi->grad[i * c + j];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<size_t>& labels) {
  if (logits.rank() != 2) fail("cross_entropy: logits must be (batch, classes)");
  const size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b) fail("cross_entropy: batch size mismatch");
  for (size_t lbl : labels)
    if (lbl >= c) fail("cross_entropy: label out of range");

  std::vector<T> probs(b * c);
  T loss = 0;
  for (size_t i = 0; i < b; ++i) {
    const T* x = logits.data().data() + i * c;
    T mx = x[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    T sum = 0;
    for (size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(x[j] - mx);
      sum += probs[i * c + j];
    }
    const T inv = T(1) / sum;
    for (size_t j = 0; j < c; ++j) probs[i * c + j] *= inv;
    loss -= std::log(std::max(probs[i * c + labels[i]], std::numeric_limits<T>::min()));
  }
  loss /= static_cast<T>(b);
  TensorT<T> out = TensorT<T>::scalar(loss);
  if (start_grad(out, {logits.requires_grad()})) {
    auto li = logits.impl(), oi = out.impl();
    active_tape<T>()->record([li, oi, probs, labels, b, c] {
      const T g = oi->grad[0] / static_cast<T>(b);
      for (size_t i = 0; i < b; ++i)
        for (size_t j = 0; j < c; ++j)
          li->grad[i * c + j] += g * (probs[i * c + j] - (labels[i] == j ? T(1) : T(0)));
    });
  }
  finish_op(out);
  return out;
}

// ---- structured ops ----------------------------------------------------------

template <typename T>
TensorT<T> roll2d(const TensorT<T>& x, long shift_h, long shift_w) {
  if (x.rank() != 4) fail("roll2d: expected (B,H,W,C), got " + shape_str(x.shape()));
  const size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const size_t sh = static_cast<size_t>(((shift_h % static_cast<long>(h)) + h) % h);
  const size_t sw = static_cast<size_t>(((shift_w % static_cast<long>(w)) + w) % w);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  for (size_t bi = 0; bi < b; ++bi)
    for (size_t y = 0; y < h; ++y) {
      const size_t oy = (y + sh) % h;
      for (size_t xx = 0; xx < w; ++xx) {
        const size_t ox = (xx + sw) % w;
        std::copy_n(x.data().data() + ((bi * h + y) * w + xx) * c, c,
                    out.data().data() + ((bi * h + oy) * w + ox) * c);
      }
    }
  if (start_grad(out, {x.requires_grad()})) {
    auto xi = x.impl(), oi = out.impl();
    active_tape<T>()->record([xi, oi, b, h, w, c, sh, sw] {
      for (size_t bi = 0; bi < b; ++bi)
        for (size_t y = 0; y < h; ++y) {
          const size_t oy = (y + sh) % h;
          for (size_t xx = 0; xx < w; ++xx) {
            const size_t ox = (xx + sw) % w;
            for (size_t ci = 0; ci < c; ++ci)
              xi->grad[((bi * h + y) * w + xx) * c + ci] +=
                  oi->grad[((bi * h + oy) * w + ox) * c + ci];
          }
        }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> pad_hw(const TensorT<T>& x, size_t add_h, size_t add_w) {
  if (x.rank() != 4) fail("pad_hw: expected (B,H,W,C), got " + shape_str(x.shape()));
  if (add_h == 0 && add_w == 0) return x;
  const size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const size_t oh = h + add_h, ow = w + add_w;
  TensorT<T> out = TensorT<T>::zeros({b, oh, ow, c});
  for (size_t bi = 0; bi < b; ++bi)
    for (size_t y = 0; y < h; ++y)
      std::copy_n(x.data().data() + (bi * h + y) * w * c, w * c,
                  out.data().data() + ((bi * oh + y) * ow) * c);
  if (start_grad(out, {x.requires_grad()})) {
    auto xi = x.impl(), oi = out.impl();
    active_tape<T>()->record([xi, oi, b, h, w, c, oh, ow] {
      for (size_t bi = 0; bi < b; ++bi)
        for (size_t y = 0; y < h; ++y)
          for (size_t i = 0; i < w * c; ++i)
            xi->grad[(bi * h + y) * w * c + i] += oi->grad[((bi * oh + y) * ow) * c + i];
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> add_head_bias(const TensorT<T>& x, const TensorT<T>& bias, size_t num_heads) {
  if (x.rank() != 3 || bias.rank() != 3 || bias.dim(0) != num_heads || bias.dim(1) != x.dim(1) ||
      bias.dim(2) != x.dim(2) || x.dim(0) % num_heads != 0)
    fail("add_head_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(bias.shape()));
  const size_t g = x.dim(0), slab = x.dim(1) * x.dim(2);
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  for (size_t i = 0; i < g; ++i) {
    const T* bsl = bias.data().data() + (i % num_heads) * slab;
    const T* xs = x.data().data() + i * slab;
    T* os = out.data().data() + i * slab;
    for (size_t j = 0; j < slab; ++j) os[j] = xs[j] + bsl[j];
  }
  if (start_grad(out, {x.requires_grad(), bias.requires_grad()})) {
    auto xi = x.impl(), bi = bias.impl(), oi = out.impl();
    active_tape<T>()->record([xi, bi, oi, g, slab, num_heads] {
      if (xi->requires_grad)
        for (size_t i = 0; i < g * slab; ++i) xi->grad[i] += oi->grad[i];
      if (bi->requires_grad)
        for (size_t i = 0; i < g; ++i) {
          T* bg = bi->grad.data() + (i % num_heads) * slab;
          const T* og = oi->grad.data() + i * slab;
          for (size_t j = 0; j < slab; ++j) bg[j] += og[j];
        }
    });
  }
  finish_op(out);
  return out;
}

template <typename T>
TensorT<T> add_window_mask(const TensorT<T>& x, const TensorT<T>& mask, size_t num_heads) {
  if (x.rank() != 3 || mask.rank() != 3 || mask.dim(1) != x.dim(1) || mask.dim(2) != x.dim(2))
    fail("add_window_mask: shape mismatch " + shape_str(x.shape()) + " vs " +
         shape_str(mask.shape()));
  const size_t g = x.dim(0), slab = x.dim(1) * x.dim(2), nw = mask.dim(0);
  if (g % (num_heads * nw) != 0)
    fail("add_window_mask: batch not divisible by heads*windows");
  TensorT<T> out = TensorT<T>::zeros(x.shape());
  for (size_t i = 0; i < g; ++i) {
    const T* msl = mask.data().data() + ((i / num_heads) % nw) * slab;
    const T* xs = x.data().data() + i * slab;
    T* os = out.data().data() + i * slab;
    for (size_t j = 0; j < slab; ++j) os[j] = xs[j] + msl[j];
  }
  if (start_grad(out, {x.requires_grad()})) {
    auto xi = x.impl(), oi = out.impl();
    const size_t n = g * slab;
    active_tape<T>()->record([xi, oi, n] {
      for (size_t i = 0; i < n; ++i) xi->grad[i] += oi->grad[i];
    });
  }
  finish_op(out);
  return out;
}

// ---- optimizer -----------------------------------------------------------------

template <typename T>
void adamw_step(std::vector<TensorT<T>>& params, AdamWStateT<T>& state, double lr, double beta1,
                double beta2, double eps, double weight_decay) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (size_t p = 0; p < params.size(); ++p) {
      state.m[p].assign(params[p].numel(), T(0));
      state.v[p].assign(params[p].numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) fail("adamw_step: state/param count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    if (state.m[p].size() != param.numel()) fail("adamw_step: state shape mismatch");
    const auto& g = param.grad();
    auto& d = param.data();
    auto& m = state.m[p];
    auto& v = state.v[p];
    for (size_t i = 0; i < d.size(); ++i) {
      d[i] -= static_cast<T>(lr * weight_decay) * d[i];
      m[i] = static_cast<T>(beta1) * m[i] + static_cast<T>(1.0 - beta1) * g[i];
      v[i] = static_cast<T>(beta2) * v[i] + static_cast<T>(1.0 - beta2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      d[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

// ---- verification ---------------------------------------------------------------

double grad_check(const std::function<Tensor64(const std::vector<Tensor64>&)>& f,
                  std::vector<Tensor64> inputs, double eps) {
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape64 tape;
  std::vector<std::vector<double>> analytic;
  {
    TapeScope64 scope(tape);
    Tensor64 loss = f(inputs);
    if (loss.numel() != 1) fail("grad_check: f must be scalar-valued");
    backward(tape, loss);
  }
  for (auto& t : inputs) analytic.push_back(t.grad());

  for (auto& t : inputs) t.set_requires_grad(false);
  double max_rel = 0.0;
  for (size_t p = 0; p < inputs.size(); ++p) {
    auto& data = inputs[p].data();
    for (size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + eps;
      const double fp = f(inputs).item();
      data[i] = keep - eps;
      const double fm = f(inputs).item();
      data[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = analytic[p][i];
      const double rel = std::abs(ad - fd) / (std::abs(ad) + std::abs(fd) + 1e-8);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---- checkpoint io ----------------------------------------------------------------

namespace {

constexpr uint32_t kMagic = 0x4B545356;  // "VSTK" little-endian
constexpr uint32_t kVersion = 1;

template <typename V>
void write_pod(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) fail(path + ": truncated checkpoint");
  return v;
}

template <typename T>
constexpr uint8_t dtype_code() {
  return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, TensorT<T>>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open for writing: " + path);
  write_pod(out, kMagic);
  write_pod(out, kVersion);
  write_pod(out, static_cast<uint64_t>(config_text.size()));
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  write_pod(out, static_cast<uint64_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, dtype_code<T>());
    write_pod(out, static_cast<uint8_t>(t.rank()));
    for (size_t d : t.shape()) write_pod(out, static_cast<uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(T)));
  }
  if (!out) fail("write failed: " + path);
}

template <typename T>
void load_checkpoint(const std::string& path, std::string& config_text,
                     std::vector<std::pair<std::string, TensorT<T>>>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open checkpoint: " + path);
  if (read_pod<uint32_t>(in, path) != kMagic) fail(path + ": bad checkpoint magic");
  if (read_pod<uint32_t>(in, path) != kVersion) fail(path + ": unsupported checkpoint version");
  const uint64_t cfg_len = read_pod<uint64_t>(in, path);
  config_text.resize(cfg_len);
  in.read(config_text.data(), static_cast<std::streamsize>(cfg_len));
  if (!in) fail(path + ": truncated config section");
  const uint64_t count = read_pod<uint64_t>(in, path);
  tensors.clear();
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_pod<uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const uint8_t dtype = read_pod<uint8_t>(in, path);
    if (dtype != dtype_code<T>()) fail(path + ": checkpoint dtype mismatch");
    const uint8_t rank = read_pod<uint8_t>(in, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<size_t>(read_pod<uint64_t>(in, path));
    TensorT<T> t = TensorT<T>::zeros(shape);
    in.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!in) fail(path + ": truncated tensor payload for '" + name + "'");
    tensors.emplace_back(std::move(name), std::move(t));
  }
}

// ---- explicit instantiations ------------------------------------------------------

#define VITST_INSTANTIATE(T)                                                                   \
  template void backward<T>(TapeT<T>&, const TensorT<T>&);                                     \
  template TensorT<T> add<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> sub<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> mul<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> scale<T>(const TensorT<T>&, double);                                     \
  template TensorT<T> mul_const<T>(const TensorT<T>&, const TensorT<T>&);                      \
  template TensorT<T> add_bias<T>(const TensorT<T>&, const TensorT<T>&);                       \
  template TensorT<T> matmul<T>(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> bmm<T>(const TensorT<T>&, const TensorT<T>&);                            \
  template TensorT<T> bmm_nt<T>(const TensorT<T>&, const TensorT<T>&);                         \
  template TensorT<T> transpose2d<T>(const TensorT<T>&);                                       \
  template TensorT<T> permute<T>(const TensorT<T>&, const std::vector<size_t>&);               \
  template TensorT<T> reshape<T>(const TensorT<T>&, Shape);                                    \
  template TensorT<T> concat<T>(const std::vector<TensorT<T>>&, size_t);                       \
  template TensorT<T> slice<T>(const TensorT<T>&, const std::vector<size_t>&,                  \
                               const std::vector<size_t>&);                                    \
  template TensorT<T> mean_all<T>(const TensorT<T>&);                                          \
  template TensorT<T> sum_all<T>(const TensorT<T>&);                                           \
  template TensorT<T> mean_axis<T>(const TensorT<T>&, size_t);                                 \
  template TensorT<T> abs_val<T>(const TensorT<T>&);                                           \
  template TensorT<T> softmax_lastdim<T>(const TensorT<T>&);                                   \
  template TensorT<T> layer_norm<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&,  \
                                    double);                                                  \
  template TensorT<T> gelu<T>(const TensorT<T>&, bool);                                        \
  template TensorT<T> linear<T>(const TensorT<T>&, const TensorT<T>&, const TensorT<T>&);      \
  template TensorT<T> embedding_lookup<T>(const TensorT<T>&, const std::vector<size_t>&);      \
  template TensorT<T> cross_entropy<T>(const TensorT<T>&, const std::vector<size_t>&);         \
  template TensorT<T> roll2d<T>(const TensorT<T>&, long, long);                                \
  template TensorT<T> pad_hw<T>(const TensorT<T>&, size_t, size_t);                            \
  template TensorT<T> add_head_bias<T>(const TensorT<T>&, const TensorT<T>&, size_t);          \
  template TensorT<T> add_window_mask<T>(const TensorT<T>&, const TensorT<T>&, size_t);        \
  template void adamw_step<T>(std::vector<TensorT<T>>&, AdamWStateT<T>&, double, double,       \
                              double, double, double);                                         \
  template void save_checkpoint<T>(const std::string&, const std::string&,                     \
                                   const std::vector<std::pair<std::string, TensorT<T>>>&);    \
  template void load_checkpoint<T>(const std::string&, std::string&,                           \
                                   std::vector<std::pair<std::string, TensorT<T>>>&);

VITST_INSTANTIATE(float)
VITST_INSTANTIATE(double)

#undef VITST_INSTANTIATE

}  // namespace vitst
