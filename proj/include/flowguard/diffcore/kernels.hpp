#pragma once

#include <algorithm>
#include <cmath>

#include "flowguard/diffcore/tensor.hpp"

// Plain tensor kernels shared by the taped ops and the tape-free inference
// path, so both produce bitwise-identical values.
namespace flowguard::kernels {

inline double logistic(double v) {
  // Split by sign so exp never overflows.
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

template <typename F>
Tensor map(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  auto in = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& x, const Tensor& y, F&& f) {
  Tensor out(x.shape());
  auto a = x.values();
  auto b = y.values();
  auto o = out.values();
  for (std::size_t i = 0; i < a.size(); ++i) o[i] = f(a[i], b[i]);
  return out;
}

inline double sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return s;
}

// [n,k] x [k,m]
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({n, m});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

// a [n,m] times transpose(b) where b is [k,m] -> [n,k]. b is transposed
// once so the inner loop runs over contiguous memory.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), m = a.cols(), k = b.rows();
  std::vector<double> bt(m * k);
  const double* pb = b.values().data();
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < m; ++j) bt[j * k + p] = pb[p * m + j];
  Tensor out({n, k});
  const double* pa = a.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = po + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const double s = pa[i * m + j];
      const double* trow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) orow[p] += s * trow[p];
    }
  }
  return out;
}

// transpose(a) times b where a is [n,k], b is [n,m] -> [k,m]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out({k, m});
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  double* po = out.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* brow = pb + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      double* orow = po + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += s * brow[j];
    }
  }
  return out;
}

inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  Tensor out(x);
  const std::size_t c = x.cols();
  auto o = out.values();
  auto b = bias.values();
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] += b[j];
  return out;
}

inline Tensor column_sums(const Tensor& g, const Shape& bias_shape) {
  Tensor out(bias_shape);
  const std::size_t c = g.cols();
  auto o = out.values();
  auto in = g.values();
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t j = 0; j < c; ++j) o[j] += in[r * c + j];
  return out;
}

inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out({n, ca + cb});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < ca; ++j) out.at(r, j) = a.at(r, j);
    for (std::size_t j = 0; j < cb; ++j) out.at(r, ca + j) = b.at(r, j);
  }
  return out;
}

inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  const std::size_t n = x.rows(), w = end - begin;
  Tensor out({n, w});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < w; ++j) out.at(r, j) = x.at(r, begin + j);
  return out;
}

inline Tensor log_softmax_rows(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double top = x.at(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) top = std::max(top, x.at(r, c));
    double acc = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) acc += std::exp(x.at(r, c) - top);
    const double lse = top + std::log(acc);
    for (std::size_t c = 0; c < x.cols(); ++c) out.at(r, c) = x.at(r, c) - lse;
  }
  return out;
}

}  // namespace flowguard::kernels
