#pragma once

#include <string>
#include <vector>

#include "ptsfa/dataset_io.hpp"
#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/model.hpp"

namespace ptsfa {

enum class Domain { source, target };

// Per-domain pools: features, confidences, labels (ground truth for source,
// argmax pseudo-labels for target). Frozen for the duration of a stage.
struct DomainBank {
  Matrix features;   // N x D
  Vec confidences;   // max softmax probability per sample
  std::vector<int> labels;
  Domain tag = Domain::source;
  int stage_stamp = 0;
  int num_classes = 0;

  int size() const { return features.rows; }
};

// One full inference pass over a split.
inline DomainBank refresh_bank(const Dataset& dataset,
                               const ModelParams& params, Domain tag,
                               int stage_stamp = 0) {
  if (dataset.samples.empty())
    throw PreconditionError("refresh_bank: empty dataset");
  const int n = static_cast<int>(dataset.samples.size());
  const int feat = params.feature_dim();
  DomainBank bank;
  bank.tag = tag;
  bank.stage_stamp = stage_stamp;
  bank.num_classes = dataset.num_classes;
  bank.features = Matrix(n, feat);
  bank.confidences.resize(n);
  bank.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    Vec f = encode(dataset.samples[i].points, params);
    Prediction pred = classify(f, params);
    for (int d = 0; d < feat; ++d) bank.features(i, d) = f[d];
    bank.confidences[i] = pred.confidence;
    bank.labels[i] =
        tag == Domain::source ? dataset.samples[i].label : pred.predicted;
  }
  return bank;
}

enum class CovarianceMode { diagonal, full };

inline constexpr double kStatsRidge = 1e-6;

// Per-class mean and population covariance (+ ridge on the diagonal).
// Classes with no members are flagged empty rather than erroring.
struct ClassStats {
  int num_classes = 0;
  int dim = 0;
  CovarianceMode mode = CovarianceMode::diagonal;
  std::vector<Vec> mean;       // per class, size dim
  std::vector<Vec> var_diag;   // per class, size dim (ridge included)
  std::vector<Matrix> cov_full;  // per class, dim x dim; empty in diagonal mode
  std::vector<int> count;

  bool empty_class(int c) const { return count[c] == 0; }
};

// Two-pass statistics over rows grouped by label, in row order.
inline ClassStats class_stats(const Matrix& features,
                              const std::vector<int>& labels, int num_classes,
                              CovarianceMode mode = CovarianceMode::diagonal,
                              double ridge = kStatsRidge) {
  if (features.rows != static_cast<int>(labels.size()))
    throw DimError("class_stats: feature/label count mismatch");
  const int dim = features.cols;
  ClassStats stats;
  stats.num_classes = num_classes;
  stats.dim = dim;
  stats.mode = mode;
  stats.mean.assign(num_classes, Vec(dim, 0.0));
  stats.var_diag.assign(num_classes, Vec(dim, 0.0));
  stats.count.assign(num_classes, 0);
  if (mode == CovarianceMode::full)
    stats.cov_full.assign(num_classes, Matrix::zeros(dim, dim));

  for (int i = 0; i < features.rows; ++i) {
    const int c = labels[i];
    if (c < 0 || c >= num_classes)
      throw RangeError("class_stats: label " + std::to_string(c) +
                       " out of range");
    stats.count[c] += 1;
    axpy(1.0, features.row(i), std::span<double>(stats.mean[c]));
  }
  for (int c = 0; c < num_classes; ++c) {
    if (stats.count[c] == 0) continue;
    for (double& v : stats.mean[c]) v /= stats.count[c];
  }
  for (int i = 0; i < features.rows; ++i) {
    const int c = labels[i];
    auto row = features.row(i);
    const Vec& mu = stats.mean[c];
    Vec& var = stats.var_diag[c];
    for (int d = 0; d < dim; ++d) {
      const double dev = row[d] - mu[d];
      var[d] += dev * dev;
    }
    if (mode == CovarianceMode::full) {
      Matrix& cov = stats.cov_full[c];
      for (int a = 0; a < dim; ++a) {
        const double da = row[a] - mu[a];
        if (da == 0.0) continue;
        axpy(da, row, cov.row(a));
        axpy(-da, std::span<const double>(mu), cov.row(a));
      }
    }
  }
  for (int c = 0; c < num_classes; ++c) {
    if (stats.count[c] == 0) {
      // Flagged empty; leave a pure-ridge covariance so downstream reads
      // stay finite.
      for (int d = 0; d < dim; ++d) stats.var_diag[c][d] = ridge;
      if (mode == CovarianceMode::full) {
        for (int d = 0; d < dim; ++d) stats.cov_full[c](d, d) = ridge;
      }
      continue;
    }
    const double inv_n = 1.0 / stats.count[c];  // population variance
    for (int d = 0; d < dim; ++d)
      stats.var_diag[c][d] = stats.var_diag[c][d] * inv_n + ridge;
    if (mode == CovarianceMode::full) {
      Matrix& cov = stats.cov_full[c];
      for (double& v : cov.data) v *= inv_n;
      for (int d = 0; d < dim; ++d) cov(d, d) += ridge;
    }
  }
  return stats;
}

inline ClassStats class_stats(const DomainBank& bank,
                              CovarianceMode mode = CovarianceMode::diagonal) {
  return class_stats(bank.features, bank.labels, bank.num_classes, mode);
}

}  // namespace ptsfa
