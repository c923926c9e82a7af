#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ptsfa/errors.hpp"
#include "ptsfa/layers.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/optim.hpp"
#include "ptsfa/rng.hpp"

namespace ptsfa {

// Shared per-point MLP 3 -> hidden -> feat with ReLU after each layer, then a
// max-pool over points, followed by a single linear classifier.
struct ModelParams {
  Matrix enc_w1;  // hidden x 3
  Vec enc_b1;
  Matrix enc_w2;  // feat x hidden
  Vec enc_b2;
  Matrix cls_w;  // classes x feat
  Vec cls_b;

  int hidden_dim() const { return enc_w1.rows; }
  int feature_dim() const { return enc_w2.rows; }
  int num_classes() const { return cls_w.rows; }

  // Encoder weights Glorot-uniform; classifier zeroed so the first
  // predictions are uniform.
  static ModelParams init(int num_classes, std::uint64_t seed, int hidden = 32,
                          int feat = 64) {
    if (num_classes < 2)
      throw PreconditionError("ModelParams::init: need at least 2 classes");
    ModelParams p;
    Rng rng(mix_seed(seed, 0xC0DE));
    auto glorot = [&rng](Matrix& w, int fan_in, int fan_out) {
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : w.data) v = rng.uniform(-bound, bound);
    };
    p.enc_w1 = Matrix(hidden, 3);
    glorot(p.enc_w1, 3, hidden);
    p.enc_b1 = Vec(hidden, 0.0);
    p.enc_w2 = Matrix(feat, hidden);
    glorot(p.enc_w2, hidden, feat);
    p.enc_b2 = Vec(feat, 0.0);
    p.cls_w = Matrix(num_classes, feat, 0.0);
    p.cls_b = Vec(num_classes, 0.0);
    return p;
  }

  static ModelParams zeros_like(const ModelParams& o) {
    ModelParams p;
    p.enc_w1 = Matrix::zeros(o.enc_w1.rows, o.enc_w1.cols);
    p.enc_b1 = Vec(o.enc_b1.size(), 0.0);
    p.enc_w2 = Matrix::zeros(o.enc_w2.rows, o.enc_w2.cols);
    p.enc_b2 = Vec(o.enc_b2.size(), 0.0);
    p.cls_w = Matrix::zeros(o.cls_w.rows, o.cls_w.cols);
    p.cls_b = Vec(o.cls_b.size(), 0.0);
    return p;
  }

  void fill(double v) {
    auto set = [v](Vec& a) { for (double& x : a) x = v; };
    set(enc_w1.data); set(enc_b1); set(enc_w2.data); set(enc_b2);
    set(cls_w.data); set(cls_b);
  }

  std::vector<TensorRef> tensors() {
    return {
        {"enc_w1", enc_w1.data.data(), enc_w1.data.size()},
        {"enc_b1", enc_b1.data(), enc_b1.size()},
        {"enc_w2", enc_w2.data.data(), enc_w2.data.size()},
        {"enc_b2", enc_b2.data(), enc_b2.size()},
        {"cls_w", cls_w.data.data(), cls_w.data.size()},
        {"cls_b", cls_b.data(), cls_b.size()},
    };
  }

  std::vector<ConstTensorRef> tensors() const {
    return {
        {"enc_w1", enc_w1.data.data(), enc_w1.data.size()},
        {"enc_b1", enc_b1.data(), enc_b1.size()},
        {"enc_w2", enc_w2.data.data(), enc_w2.data.size()},
        {"enc_b2", enc_b2.data(), enc_b2.size()},
        {"cls_w", cls_w.data.data(), cls_w.data.size()},
        {"cls_b", cls_b.data(), cls_b.size()},
    };
  }
};

// Gradients share the parameter layout.
using ModelGrads = ModelParams;

// Intermediate activations kept for the backward pass.
struct EncodeCache {
  Matrix h1_pre, h1, h2_pre, h2;
  std::vector<int> argmax;
};

inline Vec encode_cached(const Matrix& points, const ModelParams& params,
                         EncodeCache& cache) {
  require_shape(points, points.rows, 3, "encode: points");
  cache.h1_pre = affine_forward(points, params.enc_w1, params.enc_b1);
  cache.h1 = relu_forward(cache.h1_pre);
  cache.h2_pre = affine_forward(cache.h1, params.enc_w2, params.enc_b2);
  cache.h2 = relu_forward(cache.h2_pre);
  MaxPoolResult pooled = maxpool_over_points(cache.h2);
  cache.argmax = std::move(pooled.argmax);
  return std::move(pooled.pooled);
}

inline Vec encode(const Matrix& points, const ModelParams& params) {
  EncodeCache cache;
  return encode_cached(points, params, cache);
}

// Backward through max-pool and both layers. The pool routes gradient to at
// most feature_dim rows, so only those rows are touched.
inline void encode_backward(const Vec& grad_f, const Matrix& points,
                            const ModelParams& params, const EncodeCache& cache,
                            ModelGrads& grads) {
  const int feat = params.feature_dim();
  const int hidden = params.hidden_dim();
  if (static_cast<int>(grad_f.size()) != feat)
    throw DimError("encode_backward: feature gradient size mismatch");

  // Deduplicated list of rows receiving pool gradient, in ascending order.
  std::vector<int> rows;
  rows.reserve(cache.argmax.size());
  {
    std::vector<char> seen(points.rows, 0);
    for (int d = 0; d < feat; ++d) {
      if (grad_f[d] != 0.0 && !seen[cache.argmax[d]]) {
        seen[cache.argmax[d]] = 1;
      }
    }
    for (int i = 0; i < points.rows; ++i) {
      if (seen[i]) rows.push_back(i);
    }
  }
  if (rows.empty()) return;

  // grad wrt h2 on the touched rows only (relu mask folded in).
  Matrix grad_h2(static_cast<int>(rows.size()), feat);
  std::vector<int> row_slot(points.rows, -1);
  for (std::size_t r = 0; r < rows.size(); ++r) row_slot[rows[r]] = static_cast<int>(r);
  for (int d = 0; d < feat; ++d) {
    if (grad_f[d] == 0.0) continue;
    const int i = cache.argmax[d];
    if (cache.h2_pre(i, d) > 0.0) grad_h2(row_slot[i], d) = grad_f[d];
  }

  Matrix grad_h1(static_cast<int>(rows.size()), hidden);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const int i = rows[r];
    auto g2 = grad_h2.row(static_cast<int>(r));
    auto g1 = grad_h1.row(static_cast<int>(r));
    for (int d = 0; d < feat; ++d) {
      const double g = g2[d];
      if (g == 0.0) continue;
      grads.enc_b2[d] += g;
      axpy(g, cache.h1.row(i), grads.enc_w2.row(d));
      axpy(g, params.enc_w2.row(d), g1);
    }
    for (int h = 0; h < hidden; ++h) {
      if (cache.h1_pre(i, h) <= 0.0) g1[h] = 0.0;
    }
    for (int h = 0; h < hidden; ++h) {
      const double g = g1[h];
      if (g == 0.0) continue;
      grads.enc_b1[h] += g;
      axpy(g, points.row(i), grads.enc_w1.row(h));
    }
  }
}

struct Prediction {
  Vec logits;
  Vec probs;
  double confidence = 0.0;  // max probability
  int predicted = 0;        // argmax, lowest index on ties
};

inline Vec softmax(const Vec& logits) {
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  Vec p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - max_logit);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Prediction classify(const Vec& f, const ModelParams& params) {
  if (static_cast<int>(f.size()) != params.feature_dim())
    throw DimError("classify: feature size mismatch");
  Prediction pred;
  const int classes = params.num_classes();
  pred.logits.resize(classes);
  for (int c = 0; c < classes; ++c)
    pred.logits[c] = dot(params.cls_w.row(c), f) + params.cls_b[c];
  pred.probs = softmax(pred.logits);
  pred.predicted = 0;
  pred.confidence = pred.probs[0];
  for (int c = 1; c < classes; ++c) {
    if (pred.probs[c] > pred.confidence) {
      pred.confidence = pred.probs[c];
      pred.predicted = c;
    }
  }
  return pred;
}

// Accumulates classifier gradients and returns the feature gradient
// contribution in grad_f.
inline void classifier_backward(const Vec& grad_logits, const Vec& f,
                                const ModelParams& params, ModelGrads& grads,
                                Vec& grad_f) {
  const int classes = params.num_classes();
  if (static_cast<int>(grad_logits.size()) != classes)
    throw DimError("classifier_backward: logit gradient size mismatch");
  if (grad_f.size() != f.size())
    throw DimError("classifier_backward: feature gradient size mismatch");
  for (int c = 0; c < classes; ++c) {
    const double g = grad_logits[c];
    if (g == 0.0) continue;
    grads.cls_b[c] += g;
    axpy(g, std::span<const double>(f), grads.cls_w.row(c));
    axpy(g, params.cls_w.row(c), std::span<double>(grad_f));
  }
}

// Checkpoint layout: magic "PTCK", u32 version=1, u32 tensor count, then per
// tensor: u32 name length, name bytes, u32 rows, u32 cols, float64 data.
namespace detail {
inline constexpr char kCkptMagic[4] = {'P', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCkptVersion = 1;
}  // namespace detail

inline void save_checkpoint(const ModelParams& params,
                            const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  auto write_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  auto write_tensor = [&](const std::string& name, const double* data,
                          std::uint32_t rows, std::uint32_t cols) {
    write_u32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(rows);
    write_u32(cols);
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(sizeof(double) * rows * cols));
  };
  out.write(detail::kCkptMagic, 4);
  write_u32(detail::kCkptVersion);
  write_u32(6);
  write_tensor("enc_w1", params.enc_w1.data.data(),
               static_cast<std::uint32_t>(params.enc_w1.rows),
               static_cast<std::uint32_t>(params.enc_w1.cols));
  write_tensor("enc_b1", params.enc_b1.data(), 1,
               static_cast<std::uint32_t>(params.enc_b1.size()));
  write_tensor("enc_w2", params.enc_w2.data.data(),
               static_cast<std::uint32_t>(params.enc_w2.rows),
               static_cast<std::uint32_t>(params.enc_w2.cols));
  write_tensor("enc_b2", params.enc_b2.data(), 1,
               static_cast<std::uint32_t>(params.enc_b2.size()));
  write_tensor("cls_w", params.cls_w.data.data(),
               static_cast<std::uint32_t>(params.cls_w.rows),
               static_cast<std::uint32_t>(params.cls_w.cols));
  write_tensor("cls_b", params.cls_b.data(), 1,
               static_cast<std::uint32_t>(params.cls_b.size()));
  if (!out) throw IoError("save_checkpoint: write failed for " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  std::uint64_t offset = 0;
  auto fail = [&offset](const std::string& what) -> FormatError {
    return FormatError("checkpoint: " + what + " at byte offset " +
                       std::to_string(offset));
  };
  auto read_u32 = [&in, &offset, &fail](const char* what) {
    std::uint32_t v;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw fail(std::string("truncated reading ") + what);
    offset += 4;
    return v;
  };

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kCkptMagic, 4) != 0)
    throw FormatError("checkpoint: bad magic at byte offset 0");
  offset = 4;
  if (read_u32("version") != detail::kCkptVersion)
    throw fail("unsupported version");
  const std::uint32_t count = read_u32("tensor count");
  if (count != 6) throw fail("unexpected tensor count");

  ModelParams params;
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = read_u32("name length");
    if (name_len > 256) throw fail("implausible tensor name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw fail("truncated reading tensor name");
    offset += name_len;
    const std::uint32_t rows = read_u32("rows");
    const std::uint32_t cols = read_u32("cols");
    Matrix m(static_cast<int>(rows), static_cast<int>(cols));
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (!in) throw fail("truncated reading tensor " + name);
    offset += sizeof(double) * rows * cols;
    if (name == "enc_w1") params.enc_w1 = std::move(m);
    else if (name == "enc_b1") params.enc_b1 = std::move(m.data);
    else if (name == "enc_w2") params.enc_w2 = std::move(m);
    else if (name == "enc_b2") params.enc_b2 = std::move(m.data);
    else if (name == "cls_w") params.cls_w = std::move(m);
    else if (name == "cls_b") params.cls_b = std::move(m.data);
    else throw fail("unknown tensor " + name);
  }
  if (params.enc_w1.rows == 0 || params.enc_w2.rows == 0 ||
      params.cls_w.rows == 0)
    throw FormatError("checkpoint: missing tensors");
  return params;
}

}  // namespace ptsfa
