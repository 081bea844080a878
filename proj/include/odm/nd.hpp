#pragma once

// Dense n-d arrays with reverse-mode autodiff on an explicit tape.
// Single-threaded and deterministic. Double precision drives the gradient
// checks; training runs in single precision.
//
// Broadcast rule: numpy-style trailing-axis alignment only. Shapes align at
// the last axis; each aligned pair must be equal or 1, missing leading axes
// broadcast.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "odm/errors.hpp"

namespace odm::nd {

using Shape = std::vector<long long>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (long long d : s) n *= d;
  return n;
}

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<long long>(data.size())) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) {
    const long long n = shape_numel(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }
  static Tensor full(Shape s, T v) {
    const long long n = shape_numel(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), v));
  }
  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  long long numel() const { return static_cast<long long>(data.size()); }
  long long dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  Shape out(std::max(a.size(), b.size()));
  for (size_t i = 0; i < out.size(); ++i) {
    const long long da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const long long db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[out.size() - 1 - i] = std::max(da, db);
  }
  return out;
}

inline std::vector<long long> contiguous_strides(const Shape& s) {
  std::vector<long long> st(s.size());
  long long acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides for reading an operand of shape `s` as if it had shape `out`
// (zero stride across broadcast axes).
inline std::vector<long long> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = contiguous_strides(s);
  std::vector<long long> r(out.size(), 0);
  for (size_t i = 0; i < s.size(); ++i) {
    const size_t oi = out.size() - s.size() + i;
    r[oi] = s[i] == 1 ? 0 : st[i];
  }
  return r;
}

// Calls fn(out_index, a_index, b_index) for every element of `out`.
template <typename Fn>
void for_broadcast(const Shape& out, const std::vector<long long>& sa,
                   const std::vector<long long>& sb, Fn&& fn) {
  const long long n = shape_numel(out);
  const size_t r = out.size();
  std::vector<long long> idx(r, 0);
  long long ia = 0, ib = 0;
  for (long long o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// Sums `g` (shaped like `from`) down to `to` by collapsing broadcast axes.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& to) {
  if (g.shape == to) return g;
  auto out = Tensor<T>::zeros(to);
  auto st = broadcast_strides(to, g.shape);
  const size_t r = g.shape.size();
  std::vector<long long> idx(r, 0);
  long long it = 0;
  for (long long o = 0; o < g.numel(); ++o) {
    out.data[static_cast<size_t>(it)] += g.data[static_cast<size_t>(o)];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      it += st[d];
      if (idx[d] < g.shape[d]) break;
      it -= st[d] * g.shape[d];
      idx[d] = 0;
    }
  }
  return out;
}

// C(m x n) += A(m x k) * B(k x n)
template <typename T>
void gemm_accum(const T* a, const T* b, T* c, long long m, long long k, long long n) {
  for (long long i = 0; i < m; ++i) {
    for (long long l = 0; l < k; ++l) {
      const T av = a[i * k + l];
      if (av == T(0)) continue;
      const T* brow = b + l * n;
      T* crow = c + i * n;
      for (long long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C(m x n) += A(m x k) * B(n x k)^T
template <typename T>
void gemm_nt_accum(const T* a, const T* b, T* c, long long m, long long k, long long n) {
  for (long long i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (long long j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (long long l = 0; l < k; ++l) acc += arow[l] * brow[l];
      c[i * n + j] += acc;
    }
  }
}

// C(m x n) += A(k x m)^T * B(k x n)
template <typename T>
void gemm_tn_accum(const T* a, const T* b, T* c, long long m, long long k, long long n) {
  for (long long l = 0; l < k; ++l) {
    const T* arow = a + l * m;
    const T* brow = b + l * n;
    for (long long i = 0; i < m; ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      T* crow = c + i * n;
      for (long long j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;
};

template <typename T>
class Tape {
 public:
  Var<T> leaf(Tensor<T> value) { return make(std::move(value), nullptr); }

  Var<T> make(Tensor<T> value, std::function<void(Tape<T>&, int)> back) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(back)});
    nodes_.back().grad = Tensor<T>::zeros(nodes_.back().value.shape);
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  const Tensor<T>& grad(Var<T> v) const { return nodes_[static_cast<size_t>(v.id)].grad; }
  Tensor<T>& grad_mut(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  const Tensor<T>& value_at(int id) const { return nodes_[static_cast<size_t>(id)].value; }

  // Reverse sweep from a scalar loss. Leaves the graph untouched by
  // unreached nodes: their gradients stay zero.
  void backward(Var<T> loss) {
    if (loss.tape != this) throw ValidationError("backward: variable from another tape");
    auto& ln = nodes_[static_cast<size_t>(loss.id)];
    if (ln.value.numel() != 1) {
      throw ValidationError("backward: loss must be scalar, got shape " +
                            shape_str(ln.value.shape));
    }
    ln.grad.data[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      if (nodes_[static_cast<size_t>(id)].back) {
        nodes_[static_cast<size_t>(id)].back(*this, id);
      }
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape<T>&, int)> back;
  };
  std::vector<Node> nodes_;
};

namespace detail {

template <typename T>
void check_same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw ValidationError("operands live on different tapes");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcast

template <typename T, typename Fwd, typename BackA, typename BackB>
Var<T> binary_op(Var<T> a, Var<T> b, Fwd fwd, BackA back_a, BackB back_b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const Tensor<T>& vb = t.value(b);
  Shape out_shape = detail::broadcast_shape(va.shape, vb.shape);
  auto out = Tensor<T>::zeros(out_shape);
  auto sa = detail::broadcast_strides(va.shape, out_shape);
  auto sb = detail::broadcast_strides(vb.shape, out_shape);
  detail::for_broadcast(out_shape, sa, sb, [&](long long o, long long ia, long long ib) {
    out.data[static_cast<size_t>(o)] =
        fwd(va.data[static_cast<size_t>(ia)], vb.data[static_cast<size_t>(ib)]);
  });
  const int aid = a.id, bid = b.id;
  return t.make(std::move(out), [aid, bid, sa, sb, out_shape, back_a, back_b](Tape<T>& tt,
                                                                              int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& va2 = tt.value_at(aid);
    const Tensor<T>& vb2 = tt.value_at(bid);
    auto ga = Tensor<T>::zeros(g.shape);
    auto gb = Tensor<T>::zeros(g.shape);
    detail::for_broadcast(out_shape, sa, sb, [&](long long o, long long ia, long long ib) {
      const T x = va2.data[static_cast<size_t>(ia)];
      const T y = vb2.data[static_cast<size_t>(ib)];
      const T gv = g.data[static_cast<size_t>(o)];
      ga.data[static_cast<size_t>(o)] = back_a(x, y, gv);
      gb.data[static_cast<size_t>(o)] = back_b(x, y, gv);
    });
    auto ra = detail::reduce_to_shape(ga, va2.shape);
    auto rb = detail::reduce_to_shape(gb, vb2.shape);
    auto& ag = tt.grad_mut(aid);
    auto& bg = tt.grad_mut(bid);
    for (size_t i = 0; i < ag.data.size(); ++i) ag.data[i] += ra.data[i];
    for (size_t i = 0; i < bg.data.size(); ++i) bg.data[i] += rb.data[i];
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return g; });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T g) { return g; },
      [](T, T, T g) { return -g; });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T g) { return g * y; },
      [](T x, T, T g) { return g * x; });
}

template <typename T>
Var<T> div(Var<T> a, Var<T> b) {
  return binary_op<T>(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T g) { return g / y; },
      [](T x, T y, T g) { return -g * x / (y * y); });
}

template <typename T>
Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <typename T>
Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <typename T>
Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <typename T>
Var<T> operator/(Var<T> a, Var<T> b) { return div(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <typename T, typename Fwd, typename Back>
Var<T> unary_op(Var<T> a, Fwd fwd, Back back) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  auto out = Tensor<T>::zeros(va.shape);
  for (size_t i = 0; i < va.data.size(); ++i) out.data[i] = fwd(va.data[i]);
  const int aid = a.id;
  return t.make(std::move(out), [aid, back](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& x = tt.value_at(aid);
    const Tensor<T>& y = tt.value_at(self);
    auto& ag = tt.grad_mut(aid);
    for (size_t i = 0; i < g.data.size(); ++i) {
      ag.data[i] += back(x.data[i], y.data[i], g.data[i]);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  return unary_op<T>(
      a, [s](T x) { return x * s; }, [s](T, T, T g) { return g * s; });
}

template <typename T>
Var<T> add_const(Var<T> a, T c) {
  return unary_op<T>(
      a, [c](T x) { return x + c; }, [](T, T, T g) { return g; });
}

template <typename T>
Var<T> relu(Var<T> a) {
  return unary_op<T>(
      a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T, T g) { return x > T(0) ? g : T(0); });
}

template <typename T>
T sigmoid_scalar(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
Var<T> sigmoid(Var<T> a) {
  return unary_op<T>(
      a, [](T x) { return sigmoid_scalar(x); },
      [](T, T y, T g) { return g * y * (T(1) - y); });
}

template <typename T>
Var<T> abs(Var<T> a) {
  return unary_op<T>(
      a, [](T x) { return std::abs(x); },
      [](T x, T, T g) { return x > T(0) ? g : (x < T(0) ? -g : T(0)); });
}

// ---------------------------------------------------------------------------
// Shape ops

template <typename T>
Var<T> reshape(Var<T> a, Shape shape) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  if (shape_numel(shape) != va.numel()) {
    throw ShapeError("cannot reshape " + shape_str(va.shape) + " to " + shape_str(shape));
  }
  Tensor<T> out(shape, va.data);
  const int aid = a.id;
  return t.make(std::move(out), [aid](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& ag = tt.grad_mut(aid);
    for (size_t i = 0; i < g.data.size(); ++i) ag.data[i] += g.data[i];
  });
}

template <typename T>
Var<T> permute(Var<T> a, std::vector<int> axes) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const size_t r = va.shape.size();
  if (axes.size() != r) {
    throw ShapeError("permute axes rank " + std::to_string(axes.size()) +
                     " does not match tensor " + shape_str(va.shape));
  }
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) out_shape[i] = va.shape[static_cast<size_t>(axes[i])];
  auto in_strides = detail::contiguous_strides(va.shape);
  std::vector<long long> gather(r);
  for (size_t i = 0; i < r; ++i) gather[i] = in_strides[static_cast<size_t>(axes[i])];

  auto out = Tensor<T>::zeros(out_shape);
  std::vector<long long> idx(r, 0);
  long long src = 0;
  for (long long o = 0; o < out.numel(); ++o) {
    out.data[static_cast<size_t>(o)] = va.data[static_cast<size_t>(src)];
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      src += gather[d];
      if (idx[d] < out_shape[d]) break;
      src -= gather[d] * out_shape[d];
      idx[d] = 0;
    }
  }
  const int aid = a.id;
  return t.make(std::move(out),
                [aid, gather, out_shape, r](Tape<T>& tt, int self) {
                  const Tensor<T>& g = tt.grad_mut(self);
                  auto& ag = tt.grad_mut(aid);
                  std::vector<long long> idx2(r, 0);
                  long long src = 0;
                  for (long long o = 0; o < g.numel(); ++o) {
                    ag.data[static_cast<size_t>(src)] += g.data[static_cast<size_t>(o)];
                    for (size_t d = r; d-- > 0;) {
                      ++idx2[d];
                      src += gather[d];
                      if (idx2[d] < out_shape[d]) break;
                      src -= gather[d] * out_shape[d];
                      idx2[d] = 0;
                    }
                  }
                });
}

template <typename T>
Var<T> transpose_last2(Var<T> a) {
  const int r = a.tape->value(a).rank();
  if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2, got " +
                              shape_str(a.tape->value(a).shape));
  std::vector<int> axes(static_cast<size_t>(r));
  std::iota(axes.begin(), axes.end(), 0);
  std::swap(axes[static_cast<size_t>(r) - 1], axes[static_cast<size_t>(r) - 2]);
  return permute(a, axes);
}

// ---------------------------------------------------------------------------
// Matmul: 2D x 2D, ND x 2D (shared right operand), ND x ND (batched)

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const Tensor<T>& vb = t.value(b);
  const int ra = va.rank(), rb = vb.rank();
  if (ra < 2 || rb < 2) {
    throw ShapeError("matmul needs rank >= 2 operands: " + shape_str(va.shape) + " and " +
                     shape_str(vb.shape));
  }
  const long long m = va.shape[static_cast<size_t>(ra) - 2];
  const long long k = va.shape[static_cast<size_t>(ra) - 1];
  const long long kb = vb.shape[static_cast<size_t>(rb) - 2];
  const long long n = vb.shape[static_cast<size_t>(rb) - 1];
  if (k != kb) {
    throw ShapeError("matmul inner dims disagree: " + shape_str(va.shape) + " vs " +
                     shape_str(vb.shape));
  }
  long long batch = 1;
  Shape out_shape;
  bool shared_b = false;
  if (ra == 2 && rb == 2) {
    out_shape = {m, n};
  } else if (rb == 2) {
    shared_b = true;
    out_shape.assign(va.shape.begin(), va.shape.end() - 2);
    for (long long d : out_shape) batch *= d;
    out_shape.push_back(m);
    out_shape.push_back(n);
  } else {
    if (ra != rb ||
        !std::equal(va.shape.begin(), va.shape.end() - 2, vb.shape.begin())) {
      throw ShapeError("matmul batch dims disagree: " + shape_str(va.shape) + " vs " +
                       shape_str(vb.shape));
    }
    out_shape.assign(va.shape.begin(), va.shape.end() - 2);
    for (long long d : out_shape) batch *= d;
    out_shape.push_back(m);
    out_shape.push_back(n);
  }

  auto out = Tensor<T>::zeros(out_shape);
  for (long long bi = 0; bi < batch; ++bi) {
    const T* pa = va.data.data() + bi * m * k;
    const T* pb = vb.data.data() + (shared_b ? 0 : bi * k * n);
    detail::gemm_accum(pa, pb, out.data.data() + bi * m * n, m, k, n);
  }
  const int aid = a.id, bid = b.id;
  return t.make(std::move(out), [aid, bid, m, k, n, batch, shared_b](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& va2 = tt.value_at(aid);
    const Tensor<T>& vb2 = tt.value_at(bid);
    auto& ga = tt.grad_mut(aid);
    auto& gb = tt.grad_mut(bid);
    for (long long bi = 0; bi < batch; ++bi) {
      const T* pg = g.data.data() + bi * m * n;
      const T* pa = va2.data.data() + bi * m * k;
      const T* pb = vb2.data.data() + (shared_b ? 0 : bi * k * n);
      // dA = dY * B^T ; dB = A^T * dY
      detail::gemm_nt_accum(pg, pb, ga.data.data() + bi * m * k, m, n, k);
      detail::gemm_tn_accum(pa, pg, gb.data.data() + (shared_b ? 0 : bi * k * n), k, m, n);
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum_all(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  T acc = T(0);
  for (T v : va.data) acc += v;
  const int aid = a.id;
  return t.make(Tensor<T>::scalar(acc), [aid](Tape<T>& tt, int self) {
    const T g = tt.grad_mut(self).data[0];
    auto& ag = tt.grad_mut(aid);
    for (auto& v : ag.data) v += g;
  });
}

template <typename T>
Var<T> mean_all(Var<T> a) {
  const long long n = a.tape->value(a).numel();
  return scale(sum_all(a), T(1) / static_cast<T>(n));
}

// Sum over the last axis: [..., n] -> [...].
template <typename T>
Var<T> sum_last(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  if (va.rank() < 1) throw ShapeError("sum_last on scalar shape " + shape_str(va.shape));
  const long long n = va.shape.back();
  const long long rows = va.numel() / n;
  Shape out_shape(va.shape.begin(), va.shape.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto out = Tensor<T>::zeros(out_shape);
  for (long long r = 0; r < rows; ++r) {
    T acc = T(0);
    for (long long i = 0; i < n; ++i) acc += va.data[static_cast<size_t>(r * n + i)];
    out.data[static_cast<size_t>(r)] = acc;
  }
  const int aid = a.id;
  return t.make(std::move(out), [aid, n, rows](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& ag = tt.grad_mut(aid);
    for (long long r = 0; r < rows; ++r) {
      const T gv = g.data[static_cast<size_t>(r)];
      for (long long i = 0; i < n; ++i) ag.data[static_cast<size_t>(r * n + i)] += gv;
    }
  });
}

// ---------------------------------------------------------------------------
// Row-structured ops over the last axis

template <typename T>
Var<T> softmax_last(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const long long n = va.shape.back();
  const long long rows = va.numel() / n;
  auto out = Tensor<T>::zeros(va.shape);
  for (long long r = 0; r < rows; ++r) {
    const T* x = va.data.data() + r * n;
    T* y = out.data.data() + r * n;
    T mx = x[0];
    for (long long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T z = T(0);
    for (long long i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - mx);
      z += y[i];
    }
    for (long long i = 0; i < n; ++i) y[i] /= z;
  }
  const int aid = a.id;
  return t.make(std::move(out), [aid, n, rows](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& y = tt.value_at(self);
    auto& ag = tt.grad_mut(aid);
    for (long long r = 0; r < rows; ++r) {
      const T* gr = g.data.data() + r * n;
      const T* yr = y.data.data() + r * n;
      T dot = T(0);
      for (long long i = 0; i < n; ++i) dot += gr[i] * yr[i];
      for (long long i = 0; i < n; ++i) {
        ag.data[static_cast<size_t>(r * n + i)] += yr[i] * (gr[i] - dot);
      }
    }
  });
}

template <typename T>
Var<T> logsumexp_last(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const long long n = va.shape.back();
  const long long rows = va.numel() / n;
  Shape out_shape(va.shape.begin(), va.shape.end() - 1);
  if (out_shape.empty()) out_shape = {1};
  auto out = Tensor<T>::zeros(out_shape);
  for (long long r = 0; r < rows; ++r) {
    const T* x = va.data.data() + r * n;
    T mx = x[0];
    for (long long i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    T z = T(0);
    for (long long i = 0; i < n; ++i) z += std::exp(x[i] - mx);
    out.data[static_cast<size_t>(r)] = mx + std::log(z);
  }
  const int aid = a.id;
  return t.make(std::move(out), [aid, n, rows](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& x = tt.value_at(aid);
    const Tensor<T>& y = tt.value_at(self);
    auto& ag = tt.grad_mut(aid);
    for (long long r = 0; r < rows; ++r) {
      const T gv = g.data[static_cast<size_t>(r)];
      const T lse = y.data[static_cast<size_t>(r)];
      for (long long i = 0; i < n; ++i) {
        ag.data[static_cast<size_t>(r * n + i)] +=
            gv * std::exp(x.data[static_cast<size_t>(r * n + i)] - lse);
      }
    }
  });
}

// Pre-affine layer norm over the last axis, eps = 1e-5.
template <typename T>
Var<T> layer_norm_last(Var<T> a, T eps = T(1e-5)) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  const long long n = va.shape.back();
  const long long rows = va.numel() / n;
  auto out = Tensor<T>::zeros(va.shape);
  std::vector<T> inv_sigma(static_cast<size_t>(rows));
  for (long long r = 0; r < rows; ++r) {
    const T* x = va.data.data() + r * n;
    T mu = T(0);
    for (long long i = 0; i < n; ++i) mu += x[i];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (long long i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + eps);
    inv_sigma[static_cast<size_t>(r)] = is;
    for (long long i = 0; i < n; ++i) out.data[static_cast<size_t>(r * n + i)] = (x[i] - mu) * is;
  }
  const int aid = a.id;
  return t.make(std::move(out), [aid, n, rows, inv_sigma](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& y = tt.value_at(self);
    auto& ag = tt.grad_mut(aid);
    for (long long r = 0; r < rows; ++r) {
      const T* gr = g.data.data() + r * n;
      const T* yr = y.data.data() + r * n;
      T mean_g = T(0), mean_gy = T(0);
      for (long long i = 0; i < n; ++i) {
        mean_g += gr[i];
        mean_gy += gr[i] * yr[i];
      }
      mean_g /= static_cast<T>(n);
      mean_gy /= static_cast<T>(n);
      const T is = inv_sigma[static_cast<size_t>(r)];
      for (long long i = 0; i < n; ++i) {
        ag.data[static_cast<size_t>(r * n + i)] += is * (gr[i] - mean_g - yr[i] * mean_gy);
      }
    }
  });
}

// Rows of a 2D tensor scaled to unit L2 norm.
template <typename T>
Var<T> l2_normalize_rows(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  if (va.rank() != 2) {
    throw ShapeError("l2_normalize_rows expects a 2D tensor, got " + shape_str(va.shape));
  }
  const long long n = va.shape[1];
  const long long rows = va.shape[0];
  auto out = Tensor<T>::zeros(va.shape);
  std::vector<T> inv_norm(static_cast<size_t>(rows));
  for (long long r = 0; r < rows; ++r) {
    const T* x = va.data.data() + r * n;
    T s = T(0);
    for (long long i = 0; i < n; ++i) s += x[i] * x[i];
    const T norm = std::sqrt(s);
    if (!(norm > T(0))) {
      throw ValidationError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    }
    inv_norm[static_cast<size_t>(r)] = T(1) / norm;
    for (long long i = 0; i < n; ++i) out.data[static_cast<size_t>(r * n + i)] = x[i] / norm;
  }
  const int aid = a.id;
  return t.make(std::move(out), [aid, n, rows, inv_norm](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    const Tensor<T>& y = tt.value_at(self);
    auto& ag = tt.grad_mut(aid);
    for (long long r = 0; r < rows; ++r) {
      const T* gr = g.data.data() + r * n;
      const T* yr = y.data.data() + r * n;
      T dot = T(0);
      for (long long i = 0; i < n; ++i) dot += gr[i] * yr[i];
      const T is = inv_norm[static_cast<size_t>(r)];
      for (long long i = 0; i < n; ++i) {
        ag.data[static_cast<size_t>(r * n + i)] += is * (gr[i] - yr[i] * dot);
      }
    }
  });
}

// Diagonal of a square 2D tensor.
template <typename T>
Var<T> take_diag(Var<T> a) {
  Tape<T>& t = *a.tape;
  const Tensor<T>& va = t.value(a);
  if (va.rank() != 2 || va.shape[0] != va.shape[1]) {
    throw ShapeError("take_diag expects a square 2D tensor, got " + shape_str(va.shape));
  }
  const long long n = va.shape[0];
  auto out = Tensor<T>::zeros({n});
  for (long long i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] =
      va.data[static_cast<size_t>(i * n + i)];
  const int aid = a.id;
  return t.make(std::move(out), [aid, n](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& ag = tt.grad_mut(aid);
    for (long long i = 0; i < n; ++i) {
      ag.data[static_cast<size_t>(i * n + i)] += g.data[static_cast<size_t>(i)];
    }
  });
}

// ---------------------------------------------------------------------------
// Embedding lookup (ids are data, not differentiable)

template <typename T>
Var<T> embedding(Var<T> table, const Tensor<long long>& ids) {
  Tape<T>& t = *table.tape;
  const Tensor<T>& vt = t.value(table);
  if (vt.rank() != 2) {
    throw ShapeError("embedding table must be 2D, got " + shape_str(vt.shape));
  }
  const long long vocab = vt.shape[0];
  const long long d = vt.shape[1];
  Shape out_shape = ids.shape;
  out_shape.push_back(d);
  auto out = Tensor<T>::zeros(out_shape);
  for (long long i = 0; i < ids.numel(); ++i) {
    const long long id = ids.data[static_cast<size_t>(i)];
    if (id < 0 || id >= vocab) {
      throw ValidationError("embedding id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(vocab));
    }
    std::copy_n(vt.data.begin() + id * d, d, out.data.begin() + i * d);
  }
  const int tid = table.id;
  auto ids_copy = ids.data;
  return t.make(std::move(out), [tid, d, ids_copy](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& tg = tt.grad_mut(tid);
    for (size_t i = 0; i < ids_copy.size(); ++i) {
      const long long id = ids_copy[i];
      for (long long j = 0; j < d; ++j) {
        tg.data[static_cast<size_t>(id * d + j)] += g.data[i * static_cast<size_t>(d) + j];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (NCHW x OIHW cross-correlation), im2col + GEMM

namespace detail {

template <typename T>
void im2col(const T* x, long long C, long long H, long long W, long long kh, long long kw,
            long long stride, long long pad, long long OH, long long OW, T* col) {
  for (long long c = 0; c < C; ++c) {
    for (long long ky = 0; ky < kh; ++ky) {
      for (long long kx = 0; kx < kw; ++kx) {
        T* dst = col + ((c * kh + ky) * kw + kx) * OH * OW;
        for (long long oy = 0; oy < OH; ++oy) {
          const long long iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) {
            std::fill_n(dst + oy * OW, OW, T(0));
            continue;
          }
          const T* src = x + (c * H + iy) * W;
          for (long long ox = 0; ox < OW; ++ox) {
            const long long ix = ox * stride + kx - pad;
            dst[oy * OW + ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_accum(const T* col, long long C, long long H, long long W, long long kh,
                  long long kw, long long stride, long long pad, long long OH, long long OW,
                  T* x) {
  for (long long c = 0; c < C; ++c) {
    for (long long ky = 0; ky < kh; ++ky) {
      for (long long kx = 0; kx < kw; ++kx) {
        const T* src = col + ((c * kh + ky) * kw + kx) * OH * OW;
        for (long long oy = 0; oy < OH; ++oy) {
          const long long iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          T* dst = x + (c * H + iy) * W;
          for (long long ox = 0; ox < OW; ++ox) {
            const long long ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[oy * OW + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, long long stride = 1, long long pad = 0) {
  detail::check_same_tape(x, w);
  Tape<T>& t = *x.tape;
  const Tensor<T>& vx = t.value(x);
  const Tensor<T>& vw = t.value(w);
  if (vx.rank() != 4 || vw.rank() != 4) {
    throw ShapeError("conv2d expects NCHW input and OIHW weights: " + shape_str(vx.shape) +
                     " and " + shape_str(vw.shape));
  }
  const long long B = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
  const long long O = vw.shape[0], I = vw.shape[1], kh = vw.shape[2], kw = vw.shape[3];
  if (C != I) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(vx.shape) + " vs weights " +
                     shape_str(vw.shape));
  }
  if (stride < 1) throw ValidationError("conv2d stride must be positive");
  const long long OH = (H + 2 * pad - kh) / stride + 1;
  const long long OW = (W + 2 * pad - kw) / stride + 1;
  if (OH < 1 || OW < 1) {
    throw ShapeError("conv2d kernel " + shape_str(vw.shape) + " too large for input " +
                     shape_str(vx.shape));
  }
  const long long K = C * kh * kw;
  auto out = Tensor<T>::zeros({B, O, OH, OW});
  std::vector<T> col(static_cast<size_t>(K * OH * OW));
  for (long long b = 0; b < B; ++b) {
    detail::im2col(vx.data.data() + b * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW,
                   col.data());
    detail::gemm_accum(vw.data.data(), col.data(), out.data.data() + b * O * OH * OW, O, K,
                       OH * OW);
  }
  const int xid = x.id, wid = w.id;
  return t.make(std::move(out),
                [xid, wid, B, C, H, W, O, kh, kw, stride, pad, OH, OW, K](Tape<T>& tt, int self) {
                  const Tensor<T>& g = tt.grad_mut(self);
                  const Tensor<T>& vx2 = tt.value_at(xid);
                  const Tensor<T>& vw2 = tt.value_at(wid);
                  auto& gx = tt.grad_mut(xid);
                  auto& gw = tt.grad_mut(wid);
                  std::vector<T> col(static_cast<size_t>(K * OH * OW));
                  std::vector<T> dcol(static_cast<size_t>(K * OH * OW));
                  for (long long b = 0; b < B; ++b) {
                    // Recompute im2col instead of caching it: trades FLOPs for memory.
                    detail::im2col(vx2.data.data() + b * C * H * W, C, H, W, kh, kw, stride, pad,
                                   OH, OW, col.data());
                    const T* pg = g.data.data() + b * O * OH * OW;
                    // dW += dY * col^T
                    detail::gemm_nt_accum(pg, col.data(), gw.data.data(), O, OH * OW, K);
                    // dcol = W^T * dY
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    detail::gemm_tn_accum(vw2.data.data(), pg, dcol.data(), K, O, OH * OW);
                    detail::col2im_accum(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                                         gx.data.data() + b * C * H * W);
                  }
                });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, long long factor) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& vx = t.value(x);
  if (vx.rank() != 4) throw ShapeError("upsample_nearest expects NCHW, got " + shape_str(vx.shape));
  if (factor < 1) throw ValidationError("upsample factor must be positive");
  const long long B = vx.shape[0], C = vx.shape[1], H = vx.shape[2], W = vx.shape[3];
  auto out = Tensor<T>::zeros({B, C, H * factor, W * factor});
  const long long OW = W * factor;
  for (long long bc = 0; bc < B * C; ++bc) {
    const T* src = vx.data.data() + bc * H * W;
    T* dst = out.data.data() + bc * H * factor * OW;
    for (long long y = 0; y < H * factor; ++y) {
      const T* srow = src + (y / factor) * W;
      T* drow = dst + y * OW;
      for (long long xcol = 0; xcol < OW; ++xcol) drow[xcol] = srow[xcol / factor];
    }
  }
  const int xid = x.id;
  return t.make(std::move(out), [xid, B, C, H, W, factor](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& gx = tt.grad_mut(xid);
    const long long OW = W * factor;
    for (long long bc = 0; bc < B * C; ++bc) {
      const T* grow = g.data.data() + bc * H * factor * OW;
      T* dst = gx.data.data() + bc * H * W;
      for (long long y = 0; y < H * factor; ++y) {
        T* drow = dst + (y / factor) * W;
        for (long long xcol = 0; xcol < OW; ++xcol) drow[xcol / factor] += grow[y * OW + xcol];
      }
    }
  });
}

// Global average pool over the spatial axes: B x C x H x W -> B x C.
template <typename T>
Var<T> global_avg_pool2d(Var<T> x) {
  Tape<T>& t = *x.tape;
  const Tensor<T>& vx = t.value(x);
  if (vx.rank() != 4) {
    throw ShapeError("global_avg_pool2d expects NCHW, got " + shape_str(vx.shape));
  }
  const long long B = vx.shape[0], C = vx.shape[1], HW = vx.shape[2] * vx.shape[3];
  auto out = Tensor<T>::zeros({B, C});
  for (long long bc = 0; bc < B * C; ++bc) {
    T acc = T(0);
    const T* src = vx.data.data() + bc * HW;
    for (long long i = 0; i < HW; ++i) acc += src[i];
    out.data[static_cast<size_t>(bc)] = acc / static_cast<T>(HW);
  }
  const int xid = x.id;
  return t.make(std::move(out), [xid, B, C, HW](Tape<T>& tt, int self) {
    const Tensor<T>& g = tt.grad_mut(self);
    auto& gx = tt.grad_mut(xid);
    for (long long bc = 0; bc < B * C; ++bc) {
      const T gv = g.data[static_cast<size_t>(bc)] / static_cast<T>(HW);
      T* dst = gx.data.data() + bc * HW;
      for (long long i = 0; i < HW; ++i) dst[i] += gv;
    }
  });
}

// ---------------------------------------------------------------------------
// Fused binary cross-entropy with logits, mean over all elements.
// Value clamps probabilities to [eps, 1-eps]; gradient is the exact
// closed form (p - y) / N.

template <typename T>
Var<T> bce_with_logits_mean(Var<T> logits, const Tensor<T>& target, T eps = T(1e-7)) {
  Tape<T>& t = *logits.tape;
  const Tensor<T>& vl = t.value(logits);
  if (vl.shape != target.shape) {
    throw ShapeError("bce target shape " + shape_str(target.shape) + " does not match logits " +
                     shape_str(vl.shape));
  }
  const long long n = vl.numel();
  T acc = T(0);
  for (long long i = 0; i < n; ++i) {
    const T p = std::clamp(sigmoid_scalar(vl.data[static_cast<size_t>(i)]), eps, T(1) - eps);
    const T y = target.data[static_cast<size_t>(i)];
    acc -= y * std::log(p) + (T(1) - y) * std::log(T(1) - p);
  }
  const int lid = logits.id;
  auto tgt = target.data;
  return t.make(Tensor<T>::scalar(acc / static_cast<T>(n)), [lid, tgt, n](Tape<T>& tt, int self) {
    const T g = tt.grad_mut(self).data[0];
    const Tensor<T>& vl2 = tt.value_at(lid);
    auto& lg = tt.grad_mut(lid);
    const T inv_n = T(1) / static_cast<T>(n);
    for (long long i = 0; i < n; ++i) {
      const T p = sigmoid_scalar(vl2.data[static_cast<size_t>(i)]);
      lg.data[static_cast<size_t>(i)] += g * (p - tgt[static_cast<size_t>(i)]) * inv_n;
    }
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  long long checked = 0;
  long long worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central-difference check of d build(x) / dx. `build` maps (tape, leaf var)
// to a scalar var. When max_coords > 0, an evenly spaced subset of
// coordinates is checked instead of all of them. The denominator floor acts
// as an absolute tolerance for near-zero coordinates, where FD noise would
// otherwise dominate a pure ratio.
template <typename T, typename F>
GradCheckReport grad_check(F build, const Tensor<T>& x0, T h, T tol, long long max_coords = 0,
                           double denom_floor = 1e-3) {
  Tape<T> tape;
  Var<T> x = tape.leaf(x0);
  Var<T> loss = build(tape, x);
  tape.backward(loss);
  const Tensor<T> analytic = tape.grad(x);

  auto eval = [&](const Tensor<T>& xv) {
    Tape<T> t2;
    Var<T> v = t2.leaf(xv);
    Var<T> l = build(t2, v);
    if (t2.value(l).numel() != 1) {
      throw ValidationError("grad_check: build must produce a scalar");
    }
    return static_cast<double>(t2.value(l).data[0]);
  };

  const long long n = x0.numel();
  long long step = 1;
  if (max_coords > 0 && n > max_coords) step = n / max_coords;

  GradCheckReport rep;
  Tensor<T> xv = x0;
  for (long long i = 0; i < n; i += step) {
    const T orig = xv.data[static_cast<size_t>(i)];
    xv.data[static_cast<size_t>(i)] = orig + h;
    const double fp = eval(xv);
    xv.data[static_cast<size_t>(i)] = orig - h;
    const double fm = eval(xv);
    xv.data[static_cast<size_t>(i)] = orig;
    const double num = (fp - fm) / (2.0 * static_cast<double>(h));
    const double ana = static_cast<double>(analytic.data[static_cast<size_t>(i)]);
    const double denom = std::max({std::abs(num), std::abs(ana), denom_floor});
    const double rel = std::abs(num - ana) / denom;
    ++rep.checked;
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_index = i;
      rep.analytic_at_worst = ana;
      rep.numeric_at_worst = num;
    }
  }
  rep.pass = rep.max_rel_err < static_cast<double>(tol);
  return rep;
}

}  // namespace odm::nd
