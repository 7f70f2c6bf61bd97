#ifndef MMTRANS_AUTODIFF_HPP_
#define MMTRANS_AUTODIFF_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mmtrans/errors.hpp"
#include "mmtrans/tensor.hpp"

namespace mmtrans {

/// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.data(), grad.data() + grad.numel(), 0.0); }
};

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Value {
  Tape* tape = nullptr;
  int idx = -1;

  const Tensor& val() const;
  const Shape& shape() const { return val().shape(); }
};

/// Reverse-mode tape. Nodes are recorded in topological (creation) order;
/// backward() visits each node exactly once in reverse. A tape serves one
/// forward/backward pair; re-trace for the next evaluation.
class Tape {
 public:
  Value input(const Tensor& external) {
    return make(Node{Tensor(), &external, {}, false, false, nullptr, {}});
  }

  Value constant(Tensor owned) {
    return make(Node{std::move(owned), nullptr, {}, false, false, nullptr, {}});
  }

  Value param(Parameter& p) {
    return make(Node{Tensor(), &p.value, {}, false, true, &p.grad, {}});
  }

  Value op(Tensor value, bool needs, std::function<void(Tape&)> back) {
    return make(Node{std::move(value), nullptr, {}, false, needs,
                     nullptr, std::move(back)});
  }

  const Tensor& val(int idx) const {
    const Node& n = nodes_[static_cast<std::size_t>(idx)];
    return n.ext ? *n.ext : n.owned;
  }

  bool needs_grad(int idx) const {
    return nodes_[static_cast<std::size_t>(idx)].needs;
  }

  /// Gradient buffer for a node, allocated as zeros on first touch.
  Tensor& grad_buf(int idx) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.grad_alloc) {
      n.grad = Tensor(val(idx).shape());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool grad_present(int idx) const {
    return nodes_[static_cast<std::size_t>(idx)].grad_alloc;
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded op backward once,
  /// accumulating leaf gradients into their parameters' grad slots.
  void backward(Value loss) {
    if (loss.tape != this) throw ShapeError("backward: value from another tape");
    if (val(loss.idx).rank() != 0)
      throw NotScalar("backward requires a rank-0 loss, got " +
                      shape_str(val(loss.idx).shape()));
    if (backward_done_)
      throw std::logic_error("backward already executed on this tape");
    backward_done_ = true;
    grad_buf(loss.idx)[0] = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.grad_alloc) continue;
      if (n.back) n.back(*this);
      if (n.sink) {
        for (int64_t j = 0; j < n.grad.numel(); ++j) (*n.sink)[j] += n.grad[j];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    const Tensor* ext;
    Tensor grad;
    bool grad_alloc;
    bool needs;
    Tensor* sink;
    std::function<void(Tape&)> back;
  };

  Value make(Node n) {
    nodes_.push_back(std::move(n));
    return Value{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

inline const Tensor& Value::val() const { return tape->val(idx); }

namespace detail {
inline Tape* same_tape(Value a, Value b) {
  if (a.tape != b.tape) throw ShapeError("values from different tapes");
  return a.tape;
}
inline void accum(Tensor& dst, const Tensor& src) {
  for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}
}  // namespace detail

inline Value matmul(Value a, Value b) {
  Tape* t = detail::same_tape(a, b);
  Tensor out = t_matmul(a.val(), b.val());
  const bool req = t->needs_grad(a.idx) || t->needs_grad(b.idx);
  const int ia = a.idx, ib = b.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), req, [ia, ib, self](Tape& tp) {
    const Tensor& A = tp.val(ia);
    const Tensor& B = tp.val(ib);
    const Tensor& dC = tp.grad_buf(self);
    const int64_t m = A.extent(A.rank() - 2), k = A.extent(A.rank() - 1);
    const int64_t n = B.extent(B.rank() - 1);
    const int64_t batch = A.lead(2);
    const bool broadcast_b = (B.rank() == 2 && A.rank() > 2);
    if (tp.needs_grad(ia)) {
      Tensor& dA = tp.grad_buf(ia);
      for (int64_t i = 0; i < batch; ++i) {
        const double* bp = broadcast_b ? B.data() : B.data() + i * k * n;
        detail::gemm(dC.data() + i * m * n, bp, dA.data() + i * m * k, m, n,
                     k, true, false, true);
      }
    }
    if (tp.needs_grad(ib)) {
      Tensor& dB = tp.grad_buf(ib);
      for (int64_t i = 0; i < batch; ++i) {
        double* dbp = broadcast_b ? dB.data() : dB.data() + i * k * n;
        detail::gemm(A.data() + i * m * k, dC.data() + i * m * n, dbp, k, m,
                     n, true, true, false);
      }
    }
  });
}

inline Value add(Value a, Value b) {
  Tape* t = detail::same_tape(a, b);
  Tensor out = t_add(a.val(), b.val());
  const bool req = t->needs_grad(a.idx) || t->needs_grad(b.idx);
  const int ia = a.idx, ib = b.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), req, [ia, ib, self](Tape& tp) {
    const Tensor& dC = tp.grad_buf(self);
    if (tp.needs_grad(ia)) detail::accum(tp.grad_buf(ia), dC);
    if (tp.needs_grad(ib)) {
      Tensor& dB = tp.grad_buf(ib);
      if (dB.numel() == dC.numel()) {
        detail::accum(dB, dC);
      } else {
        const int64_t tail = dB.numel(), lead = dC.numel() / tail;
        for (int64_t i = 0; i < lead; ++i)
          for (int64_t j = 0; j < tail; ++j) dB[j] += dC[i * tail + j];
      }
    }
  });
}

inline Value mul(Value a, Value b) {
  Tape* t = detail::same_tape(a, b);
  Tensor out = t_mul(a.val(), b.val());
  const bool req = t->needs_grad(a.idx) || t->needs_grad(b.idx);
  const int ia = a.idx, ib = b.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), req, [ia, ib, self](Tape& tp) {
    const Tensor& dC = tp.grad_buf(self);
    if (tp.needs_grad(ia)) {
      Tensor& dA = tp.grad_buf(ia);
      const Tensor& B = tp.val(ib);
      for (int64_t i = 0; i < dA.numel(); ++i) dA[i] += dC[i] * B[i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& dB = tp.grad_buf(ib);
      const Tensor& A = tp.val(ia);
      for (int64_t i = 0; i < dB.numel(); ++i) dB[i] += dC[i] * A[i];
    }
  });
}

inline Value scale(Value a, double k) {
  Tape* t = a.tape;
  Tensor out = t_scale(a.val(), k);
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self, k](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& dC = tp.grad_buf(self);
    Tensor& dA = tp.grad_buf(ia);
    for (int64_t i = 0; i < dA.numel(); ++i) dA[i] += k * dC[i];
  });
}

inline Value relu(Value a) {
  Tape* t = a.tape;
  Tensor out = t_relu(a.val());
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& A = tp.val(ia);
    const Tensor& dC = tp.grad_buf(self);
    Tensor& dA = tp.grad_buf(ia);
    for (int64_t i = 0; i < dA.numel(); ++i)
      if (A[i] > 0) dA[i] += dC[i];
  });
}

inline Value vlog(Value a) {
  Tape* t = a.tape;
  Tensor out = t_log(a.val());
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& A = tp.val(ia);
    const Tensor& dC = tp.grad_buf(self);
    Tensor& dA = tp.grad_buf(ia);
    for (int64_t i = 0; i < dA.numel(); ++i) dA[i] += dC[i] / A[i];
  });
}

inline Value softmax(Value a, int64_t axis = -1) {
  Tape* t = a.tape;
  Tensor out = t_softmax(a.val(), axis);
  int64_t ax = axis < 0 ? axis + a.val().rank() : axis;
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self, ax](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& Y = tp.val(self);
    const Tensor& dY = tp.grad_buf(self);
    Tensor& dA = tp.grad_buf(ia);
    const int64_t n = Y.extent(ax);
    int64_t outer = 1, inner = 1;
    for (int64_t i = 0; i < ax; ++i) outer *= Y.extent(i);
    for (int64_t i = ax + 1; i < Y.rank(); ++i) inner *= Y.extent(i);
    for (int64_t o = 0; o < outer; ++o) {
      for (int64_t in = 0; in < inner; ++in) {
        const int64_t base = o * n * inner + in;
        double dot = 0;
        for (int64_t i = 0; i < n; ++i)
          dot += Y[base + i * inner] * dY[base + i * inner];
        for (int64_t i = 0; i < n; ++i)
          dA[base + i * inner] +=
              Y[base + i * inner] * (dY[base + i * inner] - dot);
      }
    }
  });
}

inline Value layer_norm(Value a, Value gain, Value bias, double eps = 1e-6) {
  Tape* t = detail::same_tape(a, gain);
  detail::same_tape(gain, bias);
  Tensor out = t_layer_norm(a.val(), gain.val(), bias.val(), eps);
  const bool req =
      t->needs_grad(a.idx) || t->needs_grad(gain.idx) || t->needs_grad(bias.idx);
  const int ia = a.idx, ig = gain.idx, ib = bias.idx,
            self = static_cast<int>(t->size());
  return t->op(std::move(out), req, [ia, ig, ib, self, eps](Tape& tp) {
    const Tensor& A = tp.val(ia);
    const Tensor& G = tp.val(ig);
    const Tensor& dY = tp.grad_buf(self);
    const int64_t n = A.extent(A.rank() - 1);
    const int64_t rows = A.lead(1);
    std::vector<double> xhat(static_cast<std::size_t>(n));
    std::vector<double> dxhat(static_cast<std::size_t>(n));
    for (int64_t r = 0; r < rows; ++r) {
      const double* x = A.data() + r * n;
      const double* dy = dY.data() + r * n;
      double mean = 0;
      for (int64_t i = 0; i < n; ++i) mean += x[i];
      mean /= static_cast<double>(n);
      double var = 0;
      for (int64_t i = 0; i < n; ++i) var += (x[i] - mean) * (x[i] - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      for (int64_t i = 0; i < n; ++i) {
        xhat[static_cast<std::size_t>(i)] = (x[i] - mean) * inv;
        dxhat[static_cast<std::size_t>(i)] = dy[i] * G[i];
      }
      if (tp.needs_grad(ig)) {
        Tensor& dG = tp.grad_buf(ig);
        for (int64_t i = 0; i < n; ++i)
          dG[i] += dy[i] * xhat[static_cast<std::size_t>(i)];
      }
      if (tp.needs_grad(ib)) {
        Tensor& dB = tp.grad_buf(ib);
        for (int64_t i = 0; i < n; ++i) dB[i] += dy[i];
      }
      if (tp.needs_grad(ia)) {
        Tensor& dA = tp.grad_buf(ia);
        double mean_dx = 0, mean_dxx = 0;
        for (int64_t i = 0; i < n; ++i) {
          mean_dx += dxhat[static_cast<std::size_t>(i)];
          mean_dxx +=
              dxhat[static_cast<std::size_t>(i)] * xhat[static_cast<std::size_t>(i)];
        }
        mean_dx /= static_cast<double>(n);
        mean_dxx /= static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i)
          dA[r * n + i] += inv * (dxhat[static_cast<std::size_t>(i)] - mean_dx -
                                  xhat[static_cast<std::size_t>(i)] * mean_dxx);
      }
    }
  });
}

inline Value concat_last(Value a, Value b) {
  Tape* t = detail::same_tape(a, b);
  Tensor out = t_concat_last(a.val(), b.val());
  const bool req = t->needs_grad(a.idx) || t->needs_grad(b.idx);
  const int ia = a.idx, ib = b.idx, self = static_cast<int>(t->size());
  const int64_t na = a.val().extent(a.val().rank() - 1);
  const int64_t nb = b.val().extent(b.val().rank() - 1);
  return t->op(std::move(out), req, [ia, ib, self, na, nb](Tape& tp) {
    const Tensor& dC = tp.grad_buf(self);
    const int64_t rows = dC.lead(1);
    if (tp.needs_grad(ia)) {
      Tensor& dA = tp.grad_buf(ia);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < na; ++i)
          dA[r * na + i] += dC[r * (na + nb) + i];
    }
    if (tp.needs_grad(ib)) {
      Tensor& dB = tp.grad_buf(ib);
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t i = 0; i < nb; ++i)
          dB[r * nb + i] += dC[r * (na + nb) + na + i];
    }
  });
}

inline Value slice_last(Value a, int64_t start, int64_t len) {
  Tape* t = a.tape;
  Tensor out = t_slice_last(a.val(), start, len);
  const int ia = a.idx, self = static_cast<int>(t->size());
  const int64_t n = a.val().extent(a.val().rank() - 1);
  return t->op(std::move(out), t->needs_grad(ia),
               [ia, self, start, len, n](Tape& tp) {
                 if (!tp.needs_grad(ia)) return;
                 const Tensor& dC = tp.grad_buf(self);
                 Tensor& dA = tp.grad_buf(ia);
                 const int64_t rows = dC.lead(1);
                 for (int64_t r = 0; r < rows; ++r)
                   for (int64_t i = 0; i < len; ++i)
                     dA[r * n + start + i] += dC[r * len + i];
               });
}

inline Value transpose_last2(Value a) {
  Tape* t = a.tape;
  Tensor out = t_transpose_last2(a.val());
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    Tensor back = t_transpose_last2(tp.grad_buf(self));
    detail::accum(tp.grad_buf(ia), back);
  });
}

/// Row lookup into a (V, d) table: out[i] = table[ids[i]], reshaped to
/// out_leading + (d,). Backward scatter-adds into the table gradient.
inline Value gather_rows(Value table, const std::vector<int>& ids,
                         Shape out_leading) {
  Tape* t = table.tape;
  const Tensor& T = table.val();
  if (T.rank() != 2) throw ShapeError("gather_rows table must be rank 2");
  const int64_t d = T.extent(1);
  Shape shape = std::move(out_leading);
  shape.push_back(d);
  if (shape_numel(shape) != static_cast<int64_t>(ids.size()) * d)
    throw ShapeError("gather_rows leading shape does not match id count");
  Tensor out(shape);
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy(T.data() + ids[i] * d, T.data() + (ids[i] + 1) * d,
              out.data() + static_cast<int64_t>(i) * d);
  const int it = table.idx, self = static_cast<int>(t->size());
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return t->op(std::move(out), t->needs_grad(it),
               [it, self, d, ids_copy](Tape& tp) {
                 if (!tp.needs_grad(it)) return;
                 const Tensor& dC = tp.grad_buf(self);
                 Tensor& dT = tp.grad_buf(it);
                 for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                   const int64_t row = (*ids_copy)[i];
                   for (int64_t j = 0; j < d; ++j)
                     dT[row * d + j] += dC[static_cast<int64_t>(i) * d + j];
                 }
               });
}

/// Index into the last axis: out[o] = a[o, ids[o]] for every leading
/// position o. Drops the last axis.
inline Value gather_last(Value a, const std::vector<int>& ids) {
  Tape* t = a.tape;
  const Tensor& A = a.val();
  const int64_t n = A.extent(A.rank() - 1);
  const int64_t rows = A.lead(1);
  if (static_cast<int64_t>(ids.size()) != rows)
    throw ShapeError("gather_last id count must equal leading size");
  Shape s(A.shape());
  s.pop_back();
  Tensor out(s);
  for (int64_t r = 0; r < rows; ++r) out[r] = A[r * n + ids[static_cast<std::size_t>(r)]];
  const int ia = a.idx, self = static_cast<int>(t->size());
  auto ids_copy = std::make_shared<std::vector<int>>(ids);
  return t->op(std::move(out), t->needs_grad(ia),
               [ia, self, n, ids_copy](Tape& tp) {
                 if (!tp.needs_grad(ia)) return;
                 const Tensor& dC = tp.grad_buf(self);
                 Tensor& dA = tp.grad_buf(ia);
                 for (int64_t r = 0; r < dC.numel(); ++r)
                   dA[r * n + (*ids_copy)[static_cast<std::size_t>(r)]] += dC[r];
               });
}

inline Value sum_all(Value a) {
  Tape* t = a.tape;
  Tensor out = Tensor::scalar(t_sum(a.val()));
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const double g = tp.grad_buf(self)[0];
    Tensor& dA = tp.grad_buf(ia);
    for (int64_t i = 0; i < dA.numel(); ++i) dA[i] += g;
  });
}

/// Inverted dropout. Keep probability 1-rate, kept entries scaled by
/// 1/(1-rate). rate <= 0 is an identity and records nothing.
inline Value dropout(Value a, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return a;
  Tape* t = a.tape;
  const Tensor& A = a.val();
  auto mask = std::make_shared<std::vector<double>>(
      static_cast<std::size_t>(A.numel()));
  std::bernoulli_distribution keep(1.0 - rate);
  const double s = 1.0 / (1.0 - rate);
  Tensor out = A;
  for (int64_t i = 0; i < A.numel(); ++i) {
    const double m = keep(rng) ? s : 0.0;
    (*mask)[static_cast<std::size_t>(i)] = m;
    out[i] *= m;
  }
  const int ia = a.idx, self = static_cast<int>(t->size());
  return t->op(std::move(out), t->needs_grad(ia), [ia, self, mask](Tape& tp) {
    if (!tp.needs_grad(ia)) return;
    const Tensor& dC = tp.grad_buf(self);
    Tensor& dA = tp.grad_buf(ia);
    for (int64_t i = 0; i < dA.numel(); ++i)
      dA[i] += dC[i] * (*mask)[static_cast<std::size_t>(i)];
  });
}

/// Central finite-difference check of reverse-mode gradients.
///
/// `f` must retrace the same deterministic scalar on every call (dropout
/// off). Compares d(f)/d(theta) from one backward pass against
/// (f(theta+eps)-f(theta-eps))/(2 eps) on up to `max_coords` coordinates
/// sampled uniformly across all parameters, and returns the maximum
/// relative error |ad-fd| / max(|ad|, |fd|, 1e-3).
inline double grad_check(const std::function<Value(Tape&)>& f,
                         const std::vector<Parameter*>& params, double eps,
                         int64_t max_coords = 500, uint64_t seed = 0x9e3779b9) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    Value loss = f(tape);
    if (loss.val().rank() != 0)
      throw NotScalar("grad_check requires a scalar function");
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape;
    return f(tape).val()[0];
  };
  int64_t total = 0;
  for (Parameter* p : params) total += p->value.numel();
  std::vector<int64_t> coords;
  if (total <= max_coords) {
    coords.resize(static_cast<std::size_t>(total));
    std::iota(coords.begin(), coords.end(), 0);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int64_t> pick(0, total - 1);
    for (int64_t i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
  }
  double max_err = 0;
  for (int64_t c : coords) {
    int64_t off = c;
    Parameter* p = nullptr;
    for (Parameter* q : params) {
      if (off < q->value.numel()) {
        p = q;
        break;
      }
      off -= q->value.numel();
    }
    const double saved = p->value[off];
    p->value[off] = saved + eps;
    const double fp = eval();
    p->value[off] = saved - eps;
    const double fm = eval();
    p->value[off] = saved;
    const double fd = (fp - fm) / (2 * eps);
    const double ad = p->grad[off];
    const double denom = std::max({std::fabs(ad), std::fabs(fd), 1e-3});
    max_err = std::max(max_err, std::fabs(ad - fd) / denom);
  }
  return max_err;
}

}  // namespace mmtrans

#endif  // MMTRANS_AUTODIFF_HPP_
