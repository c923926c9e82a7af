#pragma once

#include <string>
#include <vector>

#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"

namespace ptsfa {

// out[i,j] = sum_d w[j,d] * x[i,d] + b[j].
// Both the x row and the w row are contiguous, so the inner product
// vectorizes; this is the hot loop of the whole library.
inline Matrix affine_forward(const Matrix& x, const Matrix& w, const Vec& b) {
  if (x.cols != w.cols)
    throw DimError("affine_forward: x cols " + std::to_string(x.cols) +
                   " != w cols " + std::to_string(w.cols));
  if (static_cast<int>(b.size()) != w.rows)
    throw DimError("affine_forward: bias size " + std::to_string(b.size()) +
                   " != w rows " + std::to_string(w.rows));
  Matrix out(x.rows, w.rows);
  for (int i = 0; i < x.rows; ++i) {
    const double* xi = x.data.data() + static_cast<std::size_t>(i) * x.cols;
    double* oi = out.data.data() + static_cast<std::size_t>(i) * out.cols;
    for (int j = 0; j < w.rows; ++j) {
      const double* wj = w.data.data() + static_cast<std::size_t>(j) * w.cols;
      double s = b[j];
      for (int d = 0; d < x.cols; ++d) s += wj[d] * xi[d];
      oi[j] = s;
    }
  }
  return out;
}

struct AffineGrads {
  Matrix grad_x;
  Matrix grad_w;
  Vec grad_b;
};

inline AffineGrads affine_backward(const Matrix& grad_out, const Matrix& x,
                                   const Matrix& w) {
  if (grad_out.rows != x.rows || grad_out.cols != w.rows || x.cols != w.cols)
    throw DimError("affine_backward: shapes do not match the forward call");
  AffineGrads g;
  g.grad_x = Matrix::zeros(x.rows, x.cols);
  g.grad_w = Matrix::zeros(w.rows, w.cols);
  g.grad_b = Vec(w.rows, 0.0);
  for (int i = 0; i < x.rows; ++i) {
    auto go = grad_out.row(i);
    auto xi = x.row(i);
    auto gx = g.grad_x.row(i);
    for (int j = 0; j < w.rows; ++j) {
      const double gij = go[j];
      if (gij == 0.0) continue;
      g.grad_b[j] += gij;
      axpy(gij, w.row(j), gx);
      axpy(gij, xi, g.grad_w.row(j));
    }
  }
  return g;
}

inline Matrix relu_forward(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.data) v = v > 0.0 ? v : 0.0;
  return out;
}

// x is the pre-activation input to the matching forward call.
inline Matrix relu_backward(const Matrix& grad_out, const Matrix& x) {
  if (!grad_out.same_shape(x))
    throw DimError("relu_backward: gradient shape does not match input");
  Matrix g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    if (x.data[i] <= 0.0) g.data[i] = 0.0;
  }
  return g;
}

struct MaxPoolResult {
  Vec pooled;               // per column maximum
  std::vector<int> argmax;  // row attaining it; lowest row index on ties
};

inline MaxPoolResult maxpool_over_points(const Matrix& x) {
  if (x.rows < 1) throw PreconditionError("maxpool_over_points: empty point set");
  MaxPoolResult r;
  r.pooled.assign(x.cols, 0.0);
  r.argmax.assign(x.cols, 0);
  for (int d = 0; d < x.cols; ++d) {
    double best = x(0, d);
    int arg = 0;
    for (int i = 1; i < x.rows; ++i) {
      if (x(i, d) > best) {
        best = x(i, d);
        arg = i;
      }
    }
    r.pooled[d] = best;
    r.argmax[d] = arg;
  }
  return r;
}

// Gradient lands only on the argmax row of each column.
inline Matrix maxpool_backward(const Vec& grad_pooled,
                               const std::vector<int>& argmax, int num_rows) {
  if (grad_pooled.size() != argmax.size())
    throw DimError("maxpool_backward: gradient size does not match argmax");
  Matrix g(num_rows, static_cast<int>(grad_pooled.size()));
  for (std::size_t d = 0; d < grad_pooled.size(); ++d)
    g(argmax[d], static_cast<int>(d)) = grad_pooled[d];
  return g;
}

}  // namespace ptsfa
