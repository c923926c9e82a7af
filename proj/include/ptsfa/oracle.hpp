#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ptsfa/domainstats.hpp"
#include "ptsfa/errors.hpp"
#include "ptsfa/losses.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/rng.hpp"

namespace ptsfa {

struct McEstimate {
  double mean = 0.0;
  double se = 0.0;  // sample stddev / sqrt(draws)
};

// Finite-sample estimate of the augmented cross-entropy: draws from
// N(f + delta_mu^y, lambda * Sigma^y) (diagonal), averages the softmax CE.
// Each draw seeds its own generator from (seed, draw index), so the
// sequence is reproducible and draws are order-independent.
inline McEstimate mc_augmented_loss(const Vec& f, int y, const Matrix& w,
                                    const Vec& b,
                                    const AugmentationContext& ctx, int draws,
                                    std::uint64_t seed) {
  if (draws < 2) throw PreconditionError("mc_augmented_loss: need >= 2 draws");
  const int dim = static_cast<int>(f.size());
  const int classes = w.rows;
  if (y < 0 || y >= classes)
    throw RangeError("mc_augmented_loss: label out of range");

  const Vec& dmu = ctx.delta_mu[y];
  Vec stddev(dim);
  for (int d = 0; d < dim; ++d)
    stddev[d] = std::sqrt(ctx.lambda * ctx.sigma_diag[y][d]);

  // Welford accumulation of the per-draw losses.
  double mean = 0.0, m2 = 0.0;
  Vec sample(dim), logits(classes);
  for (int m = 0; m < draws; ++m) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(m)));
    for (int d = 0; d < dim; ++d)
      sample[d] = f[d] + dmu[d] + stddev[d] * rng.normal();
    for (int c = 0; c < classes; ++c)
      logits[c] = dot(w.row(c), std::span<const double>(sample)) + b[c];
    Vec p = softmax(logits);
    const double loss = -std::log(std::max(p[y], 1e-300));
    const double delta = loss - mean;
    mean += delta / (m + 1);
    m2 += delta * (loss - mean);
  }
  McEstimate est;
  est.mean = mean;
  est.se = std::sqrt(m2 / (draws - 1)) / std::sqrt(static_cast<double>(draws));
  return est;
}

// Central differences, h = 1e-4 by default. The functional is evaluated at
// perturbed copies of the parameter vector; the vector is restored exactly.
inline Vec finite_diff_grad(const std::function<double()>& loss,
                            std::span<double> params, double h = 1e-4) {
  Vec grad(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss();
    params[i] = saved - h;
    const double down = loss();
    params[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                         std::to_string(i));
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

// |a - g| / max(|a|, |g|, 1e-8)
inline double grad_rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline double max_grad_rel_err(std::span<const double> analytic,
                               std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, grad_rel_err(analytic[i], numeric[i]));
  return worst;
}

// ---------------------------------------------------------------------------
// Runnable verification suites (surfaced by the CLI verbs verify-bound and
// grad-check, reused by the acceptance tests).

struct BoundRow {
  int instance = 0;
  double estimate = 0.0;
  double se = 0.0;
  double closed_form = 0.0;
  bool pass = false;
};

namespace detail {

struct LossInstance {
  Matrix features;  // batch x dim
  std::vector<int> labels;
  Matrix w;
  Vec b;
  AugmentationContext ctx;
};

// Random instance with dim <= 8, classes <= 4, PSD diagonal covariance and
// lambda in [0, 0.5].
inline LossInstance random_loss_instance(Rng& rng, int batch = 1) {
  LossInstance inst;
  const int dim = 2 + static_cast<int>(rng.uniform_index(7));
  const int classes = 2 + static_cast<int>(rng.uniform_index(3));
  inst.features = Matrix(batch, dim);
  for (double& v : inst.features.data) v = rng.normal();
  inst.labels.resize(batch);
  for (int& l : inst.labels) l = static_cast<int>(rng.uniform_index(classes));
  inst.w = Matrix(classes, dim);
  for (double& v : inst.w.data) v = rng.normal();
  inst.b = Vec(classes);
  for (double& v : inst.b) v = rng.normal() * 0.5;
  inst.ctx = AugmentationContext::zero(classes, dim);
  for (int c = 0; c < classes; ++c)
    for (int d = 0; d < dim; ++d) {
      inst.ctx.delta_mu[c][d] = rng.normal() * 0.5;
      inst.ctx.sigma_diag[c][d] = rng.uniform(0.0, 1.0);
    }
  inst.ctx.lambda = rng.uniform(0.0, 0.5);
  return inst;
}

}  // namespace detail

// Draws `instances` random single-sample instances and checks the
// Monte-Carlo estimate against the closed-form value: pass means
// estimate <= closed_form + 3 * SE (the one-sided Jensen relation).
inline std::vector<BoundRow> verify_bound_suite(int instances, int draws,
                                                std::uint64_t seed) {
  if (instances < 1)
    throw PreconditionError("verify_bound_suite: need at least one instance");
  Rng rng(mix_seed(seed, 0xB0DD));
  std::vector<BoundRow> rows;
  rows.reserve(instances);
  for (int i = 0; i < instances; ++i) {
    detail::LossInstance inst = detail::random_loss_instance(rng);
    Vec f(inst.features.row(0).begin(), inst.features.row(0).end());
    const double closed =
        ptsfa_loss_and_grads(inst.features, inst.labels, inst.w, inst.b,
                             inst.ctx)
            .loss;
    McEstimate est = mc_augmented_loss(f, inst.labels[0], inst.w, inst.b,
                                       inst.ctx, draws, rng.next_u64());
    BoundRow row;
    row.instance = i;
    row.estimate = est.mean;
    row.se = est.se;
    row.closed_form = closed;
    row.pass = est.mean <= closed + 3.0 * est.se;
    rows.push_back(row);
  }
  return rows;
}

struct GradSuiteResult {
  std::string name;
  double max_rel_err = 0.0;
  int trials = 0;
};

// Central-difference checks over every loss and the full model pipeline.
inline std::vector<GradSuiteResult> gradient_check_suites(int trials,
                                                          std::uint64_t seed) {
  if (trials < 1)
    throw PreconditionError("gradient_check_suites: need at least one trial");
  std::vector<GradSuiteResult> results;

  {  // ptsfa loss wrt classifier weights, biases and features
    Rng rng(mix_seed(seed, 1));
    GradSuiteResult r{"ptsfa", 0.0, trials};
    for (int t = 0; t < trials; ++t) {
      detail::LossInstance inst = detail::random_loss_instance(rng, 3);
      auto loss = [&]() {
        return ptsfa_loss_and_grads(inst.features, inst.labels, inst.w, inst.b,
                                    inst.ctx)
            .loss;
      };
      PtsfaResult res = ptsfa_loss_and_grads(inst.features, inst.labels,
                                             inst.w, inst.b, inst.ctx);
      r.max_rel_err = std::max(
          r.max_rel_err,
          max_grad_rel_err(res.grad_w.data,
                           finite_diff_grad(loss, std::span<double>(inst.w.data))));
      r.max_rel_err = std::max(
          r.max_rel_err,
          max_grad_rel_err(res.grad_b,
                           finite_diff_grad(loss, std::span<double>(inst.b))));
      r.max_rel_err = std::max(
          r.max_rel_err,
          max_grad_rel_err(
              res.grad_features.data,
              finite_diff_grad(loss, std::span<double>(inst.features.data))));
    }
    results.push_back(r);
  }

  {  // ida loss wrt features, mixing degraded classes in
    Rng rng(mix_seed(seed, 2));
    GradSuiteResult r{"ida", 0.0, trials};
    for (int t = 0; t < trials; ++t) {
      const int dim = 3 + static_cast<int>(rng.uniform_index(5));
      const int classes = 2 + static_cast<int>(rng.uniform_index(3));
      const int batch = 1 + static_cast<int>(rng.uniform_index(4));
      Matrix features(batch, dim);
      for (double& v : features.data) v = rng.normal() + 0.2;
      std::vector<int> labels(batch);
      for (int& l : labels) l = static_cast<int>(rng.uniform_index(classes));
      std::vector<Vec> means(classes, Vec(dim));
      for (auto& m : means)
        for (double& v : m) v = rng.normal() + 0.2;
      std::vector<bool> degraded(classes, false);
      if (classes > 2 && rng.uniform() < 0.5) {
        degraded[classes - 1] = true;
        for (int& l : labels)
          if (l == classes - 1) l = 0;
      }
      const double kappa = rng.uniform(0.5, 4.0);
      auto loss = [&]() {
        return ida_loss(features, labels, means, degraded, kappa).loss;
      };
      IdaResult res = ida_loss(features, labels, means, degraded, kappa);
      r.max_rel_err = std::max(
          r.max_rel_err,
          max_grad_rel_err(
              res.grad_features.data,
              finite_diff_grad(loss, std::span<double>(features.data))));
    }
    results.push_back(r);
  }

  {  // warm-up CE wrt logits
    Rng rng(mix_seed(seed, 3));
    GradSuiteResult r{"warmup_ce", 0.0, trials};
    for (int t = 0; t < trials; ++t) {
      const int classes = 2 + static_cast<int>(rng.uniform_index(3));
      const int batch = 1 + static_cast<int>(rng.uniform_index(6));
      Matrix logits(batch, classes);
      for (double& v : logits.data) v = rng.normal() * 2.0;
      std::vector<int> labels(batch);
      for (int& l : labels) l = static_cast<int>(rng.uniform_index(classes));
      auto loss = [&]() { return warmup_ce(logits, labels).loss; };
      CeResult res = warmup_ce(logits, labels);
      r.max_rel_err = std::max(
          r.max_rel_err,
          max_grad_rel_err(
              res.grad_logits.data,
              finite_diff_grad(loss, std::span<double>(logits.data))));
    }
    results.push_back(r);
  }

  {  // full pipeline: ptsfa + ida through classifier and encoder
    Rng rng(mix_seed(seed, 4));
    GradSuiteResult r{"model_pipeline", 0.0, trials};
    for (int t = 0; t < trials; ++t) {
      const int classes = 2 + static_cast<int>(rng.uniform_index(3));
      const int m = 4 + static_cast<int>(rng.uniform_index(13));
      const int batch = 2;
      ModelParams params = ModelParams::init(classes, rng.next_u64());
      for (double& v : params.cls_w.data) v = rng.normal() * 0.3;
      for (double& v : params.cls_b) v = rng.normal() * 0.1;
      for (double& v : params.enc_b1) v = rng.normal() * 0.1;
      for (double& v : params.enc_b2) v = rng.normal() * 0.1;
      const int feat = params.feature_dim();
      std::vector<Matrix> clouds;
      std::vector<int> labels;
      for (int i = 0; i < batch; ++i) {
        Matrix pts(m, 3);
        for (double& v : pts.data) v = rng.normal();
        clouds.push_back(std::move(pts));
        labels.push_back(static_cast<int>(rng.uniform_index(classes)));
      }
      AugmentationContext ctx = AugmentationContext::zero(classes, feat);
      for (int c = 0; c < classes; ++c)
        for (int d = 0; d < feat; ++d) {
          ctx.delta_mu[c][d] = rng.normal() * 0.3;
          ctx.sigma_diag[c][d] = rng.uniform(0.0, 0.5);
        }
      ctx.lambda = rng.uniform(0.0, 0.5);
      std::vector<Vec> means(classes, Vec(feat));
      for (auto& mu : means)
        for (double& v : mu) v = rng.normal() + 0.3;
      std::vector<bool> degraded(classes, false);
      const double kappa = 2.0;

      auto loss = [&]() {
        Matrix features(batch, feat);
        for (int i = 0; i < batch; ++i) {
          Vec f = encode(clouds[i], params);
          std::copy(f.begin(), f.end(), features.row(i).begin());
        }
        const double l_ptsfa =
            ptsfa_loss_and_grads(features, labels, params.cls_w, params.cls_b,
                                 ctx)
                .loss;
        const double l_ida =
            ida_loss(features, labels, means, degraded, kappa).loss;
        return l_ptsfa + l_ida;
      };

      Matrix features(batch, feat);
      std::vector<EncodeCache> caches(batch);
      for (int i = 0; i < batch; ++i) {
        Vec f = encode_cached(clouds[i], params, caches[i]);
        std::copy(f.begin(), f.end(), features.row(i).begin());
      }
      PtsfaResult pt = ptsfa_loss_and_grads(features, labels, params.cls_w,
                                            params.cls_b, ctx);
      IdaResult ida = ida_loss(features, labels, means, degraded, kappa);
      ModelGrads grads = ModelParams::zeros_like(params);
      for (int c = 0; c < classes; ++c) {
        axpy(1.0, pt.grad_w.row(c), grads.cls_w.row(c));
        grads.cls_b[c] += pt.grad_b[c];
      }
      Vec grad_f(feat);
      for (int i = 0; i < batch; ++i) {
        for (int d = 0; d < feat; ++d)
          grad_f[d] = pt.grad_features(i, d) + ida.grad_features(i, d);
        encode_backward(grad_f, clouds[i], params, caches[i], grads);
      }
      auto analytic = grads.tensors();
      auto tensors = params.tensors();
      for (std::size_t tt = 0; tt < tensors.size(); ++tt) {
        Vec fd = finite_diff_grad(
            loss, std::span<double>(tensors[tt].data, tensors[tt].size));
        r.max_rel_err = std::max(
            r.max_rel_err,
            max_grad_rel_err({analytic[tt].data, analytic[tt].size}, fd));
      }
    }
    results.push_back(r);
  }

  return results;
}

// Naive two-pass mean and population variance, no ridge, no shortcuts.
// Exists to cross-check class_stats, so it must stay independent of it.
inline ClassStats bruteforce_class_stats(const Matrix& features,
                                         const std::vector<int>& labels,
                                         int num_classes) {
  const int dim = features.cols;
  ClassStats stats;
  stats.num_classes = num_classes;
  stats.dim = dim;
  stats.mode = CovarianceMode::diagonal;
  stats.mean.assign(num_classes, Vec(dim, 0.0));
  stats.var_diag.assign(num_classes, Vec(dim, 0.0));
  stats.count.assign(num_classes, 0);
  for (int c = 0; c < num_classes; ++c) {
    std::vector<int> members;
    for (int i = 0; i < features.rows; ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    stats.count[c] = static_cast<int>(members.size());
    if (members.empty()) continue;
    for (int d = 0; d < dim; ++d) {
      double sum = 0.0;
      for (int i : members) sum += features(i, d);
      const double mu = sum / static_cast<double>(members.size());
      double sq = 0.0;
      for (int i : members) {
        const double dev = features(i, d) - mu;
        sq += dev * dev;
      }
      stats.mean[c][d] = mu;
      stats.var_diag[c][d] = sq / static_cast<double>(members.size());
    }
  }
  return stats;
}

}  // namespace ptsfa
