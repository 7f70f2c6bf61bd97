#ifndef MMTRANS_TENSOR_HPP_
#define MMTRANS_TENSOR_HPP_

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mmtrans/errors.hpp"

namespace mmtrans {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

/// Dense row-major tensor of doubles. Rank 0 is a scalar with one element.
class Tensor {
 public:
  Tensor() : shape_{}, data_(1, 0.0) {}

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {
    for (int64_t e : shape_)
      if (e <= 0) throw ShapeError("non-positive extent in " + shape_str(shape_));
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
      throw ShapeError("element count does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) {
    Tensor t;
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  int64_t extent(int64_t axis) const { return shape_[static_cast<std::size_t>(axis)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  double& at(std::initializer_list<int64_t> idx) { return data_[flat(idx)]; }
  double at(std::initializer_list<int64_t> idx) const { return data_[flat(idx)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  /// Product of the last `k` extents.
  int64_t tail(int64_t k) const {
    int64_t n = 1;
    for (int64_t i = rank() - k; i < rank(); ++i) n *= shape_[static_cast<std::size_t>(i)];
    return n;
  }

  /// Product of all extents except the last `k`.
  int64_t lead(int64_t k) const { return numel() / tail(k); }

 private:
  std::size_t flat(std::initializer_list<int64_t> idx) const {
    int64_t off = 0;
    std::size_t a = 0;
    for (int64_t i : idx) {
      off = off * shape_[a] + i;
      ++a;
    }
    return static_cast<std::size_t>(off);
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace detail {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

/// C(m,n) += or = A(m,k) * B(k,n), raw row-major buffers.
inline void gemm(const double* a, const double* b, double* c, int64_t m,
                 int64_t k, int64_t n, bool accumulate, bool trans_a = false,
                 bool trans_b = false) {
  MapMat C(c, m, n);
  auto mul = [&](const auto& A, const auto& B) {
    if (accumulate)
      C.noalias() += A * B;
    else
      C.noalias() = A * B;
  };
  if (!trans_a && !trans_b)
    mul(CMapMat(a, m, k), CMapMat(b, k, n));
  else if (trans_a && !trans_b)
    mul(CMapMat(a, k, m).transpose(), CMapMat(b, k, n));
  else if (!trans_a && trans_b)
    mul(CMapMat(a, m, k), CMapMat(b, n, k).transpose());
  else
    mul(CMapMat(a, k, m).transpose(), CMapMat(b, n, k).transpose());
}

}  // namespace detail

/// Batched matrix product. Shapes (..., m, k) x (..., k, n) -> (..., m, n).
/// A rank-2 right operand is broadcast over the left operand's leading axes.
inline Tensor t_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const int64_t m = a.extent(a.rank() - 2), k = a.extent(a.rank() - 1);
  const int64_t k2 = b.extent(b.rank() - 2), n = b.extent(b.rank() - 1);
  const bool broadcast_b = (b.rank() == 2 && a.rank() > 2);
  if (k != k2 || (!broadcast_b && a.rank() != b.rank()))
    throw ShapeError("matmul mismatch " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const int64_t batch = a.lead(2);
  if (!broadcast_b) {
    for (int64_t i = 0; i + 2 < a.rank(); ++i)
      if (a.extent(i) != b.extent(i))
        throw ShapeError("matmul batch mismatch " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  Shape out_shape(a.shape());
  out_shape[static_cast<std::size_t>(a.rank() - 1)] = n;
  Tensor out(out_shape);
  for (int64_t i = 0; i < batch; ++i) {
    const double* bp = broadcast_b ? b.data() : b.data() + i * k * n;
    detail::gemm(a.data() + i * m * k, bp, out.data() + i * m * n, m, k, n,
                 false);
  }
  return out;
}

inline Tensor t_transpose_last2(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  const int64_t m = a.extent(a.rank() - 2), n = a.extent(a.rank() - 1);
  Shape s(a.shape());
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor out(s);
  const int64_t batch = a.lead(2);
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = a.data() + b * m * n;
    double* dst = out.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return out;
}

/// Elementwise sum. `b` may also be a broadcast over `a`'s leading axes
/// when its shape equals a suffix of `a`'s shape.
inline Tensor t_add(const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) {
    Tensor out = a;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
    return out;
  }
  if (b.rank() < a.rank()) {
    bool suffix = true;
    for (int64_t i = 0; i < b.rank(); ++i)
      if (b.extent(i) != a.extent(a.rank() - b.rank() + i)) suffix = false;
    if (suffix) {
      Tensor out = a;
      const int64_t tail = b.numel(), lead = a.numel() / tail;
      for (int64_t i = 0; i < lead; ++i)
        for (int64_t j = 0; j < tail; ++j) out[i * tail + j] += b[j];
      return out;
    }
  }
  throw ShapeError("add mismatch " + shape_str(a.shape()) + " + " +
                   shape_str(b.shape()));
}

inline Tensor t_mul(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("mul mismatch " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()));
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

inline Tensor t_scale(const Tensor& a, double k) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= k;
  return out;
}

inline Tensor t_relu(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i)
    if (out[i] < 0) out[i] = 0;
  return out;
}

inline Tensor t_log(const Tensor& a) {
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  return out;
}

/// Numerically stable softmax along `axis` (negative counts from the back).
inline Tensor t_softmax(const Tensor& a, int64_t axis = -1) {
  if (axis < 0) axis += a.rank();
  if (axis < 0 || axis >= a.rank() || a.rank() == 0)
    throw ShapeError("softmax invalid axis for " + shape_str(a.shape()));
  int64_t outer = 1, inner = 1;
  const int64_t n = a.extent(axis);
  for (int64_t i = 0; i < axis; ++i) outer *= a.extent(i);
  for (int64_t i = axis + 1; i < a.rank(); ++i) inner *= a.extent(i);
  Tensor out = a;
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      double* base = out.data() + o * n * inner + in;
      double mx = base[0];
      for (int64_t i = 1; i < n; ++i) mx = std::max(mx, base[i * inner]);
      double sum = 0;
      for (int64_t i = 0; i < n; ++i) {
        double e = std::exp(base[i * inner] - mx);
        base[i * inner] = e;
        sum += e;
      }
      for (int64_t i = 0; i < n; ++i) base[i * inner] /= sum;
    }
  }
  return out;
}

inline Tensor t_concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0)
    throw ShapeError("concat_last rank mismatch " + shape_str(a.shape()) +
                     " ++ " + shape_str(b.shape()));
  for (int64_t i = 0; i + 1 < a.rank(); ++i)
    if (a.extent(i) != b.extent(i))
      throw ShapeError("concat_last mismatch " + shape_str(a.shape()) +
                       " ++ " + shape_str(b.shape()));
  const int64_t na = a.extent(a.rank() - 1), nb = b.extent(b.rank() - 1);
  Shape s(a.shape());
  s.back() = na + nb;
  Tensor out(s);
  const int64_t rows = a.lead(1);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(a.data() + r * na, a.data() + (r + 1) * na,
              out.data() + r * (na + nb));
    std::copy(b.data() + r * nb, b.data() + (r + 1) * nb,
              out.data() + r * (na + nb) + na);
  }
  return out;
}

inline Tensor t_slice_last(const Tensor& a, int64_t start, int64_t len) {
  const int64_t n = a.extent(a.rank() - 1);
  if (start < 0 || len <= 0 || start + len > n)
    throw ShapeError("slice_last out of range for " + shape_str(a.shape()));
  Shape s(a.shape());
  s.back() = len;
  Tensor out(s);
  const int64_t rows = a.lead(1);
  for (int64_t r = 0; r < rows; ++r)
    std::copy(a.data() + r * n + start, a.data() + r * n + start + len,
              out.data() + r * len);
  return out;
}

/// Layer normalization over the last axis followed by an affine transform.
inline Tensor t_layer_norm(const Tensor& a, const Tensor& gain,
                           const Tensor& bias, double eps) {
  const int64_t n = a.extent(a.rank() - 1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.extent(0) != n ||
      bias.extent(0) != n)
    throw ShapeError("layer_norm affine params must be rank-1 of width " +
                     std::to_string(n));
  Tensor out = a;
  const int64_t rows = a.lead(1);
  for (int64_t r = 0; r < rows; ++r) {
    double* row = out.data() + r * n;
    double mean = 0;
    for (int64_t i = 0; i < n; ++i) mean += row[i];
    mean /= static_cast<double>(n);
    double var = 0;
    for (int64_t i = 0; i < n; ++i) var += (row[i] - mean) * (row[i] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < n; ++i)
      row[i] = (row[i] - mean) * inv * gain[i] + bias[i];
  }
  return out;
}

inline double t_sum(const Tensor& a) {
  double s = 0;
  for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
  return s;
}

inline Tensor t_uniform(Shape shape, double lo, double hi,
                        std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

}  // namespace mmtrans

#endif  // MMTRANS_TENSOR_HPP_
