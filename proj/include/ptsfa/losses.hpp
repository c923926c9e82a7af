#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"
#include "ptsfa/model.hpp"

namespace ptsfa {

// Frozen per-stage augmentation statistics. Constants under differentiation:
// gradients never flow into delta_mu or the covariances.
struct AugmentationContext {
  std::vector<Vec> delta_mu;    // per class
  std::vector<Vec> sigma_diag;  // per class, diagonal covariance
  std::vector<Matrix> sigma_full;  // per class; empty when diagonal mode
  double lambda = 0.0;

  bool full_covariance() const { return !sigma_full.empty(); }

  static AugmentationContext zero(int classes, int dim) {
    AugmentationContext ctx;
    ctx.delta_mu.assign(classes, Vec(dim, 0.0));
    ctx.sigma_diag.assign(classes, Vec(dim, 0.0));
    return ctx;
  }
};

// Linear ramp of the augmentation strength over the whole run.
inline double lambda_schedule(int epoch, int total_epochs, double lambda0) {
  if (total_epochs < 1)
    throw PreconditionError("lambda_schedule: total epochs < 1");
  if (epoch < 0 || epoch > total_epochs)
    throw RangeError("lambda_schedule: epoch outside [0, total]");
  return (static_cast<double>(epoch) / total_epochs) * lambda0;
}

namespace detail {

// Sigma^y (w_c - w_y), using whichever covariance form the context carries.
inline Vec sigma_times_diff(const AugmentationContext& ctx, int y,
                            std::span<const double> wc,
                            std::span<const double> wy) {
  const std::size_t dim = wc.size();
  Vec out(dim, 0.0);
  if (ctx.full_covariance()) {
    const Matrix& sigma = ctx.sigma_full[y];
    for (std::size_t a = 0; a < dim; ++a) {
      auto row = sigma.row(static_cast<int>(a));
      double s = 0.0;
      for (std::size_t b = 0; b < dim; ++b) s += row[b] * (wc[b] - wy[b]);
      out[a] = s;
    }
  } else {
    const Vec& sigma = ctx.sigma_diag[y];
    for (std::size_t a = 0; a < dim; ++a) out[a] = sigma[a] * (wc[a] - wy[a]);
  }
  return out;
}

}  // namespace detail

// Augmented logits: the plain score plus a mean-shift term and a covariance
// widening on every non-true class. The true-class entry stays w_y.f + b_y.
inline Vec ptsfa_logits(const Vec& f, int y, const Matrix& w, const Vec& b,
                        const AugmentationContext& ctx) {
  const int classes = w.rows;
  if (static_cast<int>(f.size()) != w.cols)
    throw DimError("ptsfa_logits: feature size does not match classifier");
  if (y < 0 || y >= classes)
    throw RangeError("ptsfa_logits: label out of range");
  const Vec& dmu = ctx.delta_mu[y];
  auto wy = w.row(y);
  Vec theta(classes);
  for (int c = 0; c < classes; ++c) {
    auto wc = w.row(c);
    double t = dot(wc, f) + b[c];
    if (c != y) {
      double shift = 0.0;
      double quad = 0.0;
      if (ctx.full_covariance()) {
        Vec sd = detail::sigma_times_diff(ctx, y, wc, wy);
        for (int d = 0; d < w.cols; ++d) {
          shift += (wc[d] - wy[d]) * dmu[d];
          quad += (wc[d] - wy[d]) * sd[d];
        }
      } else {
        const Vec& sigma = ctx.sigma_diag[y];
        for (int d = 0; d < w.cols; ++d) {
          const double diff = wc[d] - wy[d];
          shift += diff * dmu[d];
          quad += diff * sigma[d] * diff;
        }
      }
      t += shift + 0.5 * ctx.lambda * quad;
    }
    theta[c] = t;
  }
  return theta;
}

struct PtsfaResult {
  double loss = 0.0;
  Matrix grad_w;
  Vec grad_b;
  Matrix grad_features;
};

// Mean softmax cross-entropy over the augmented logits with full analytic
// gradients. W appears in the direct score, the mean-shift term and the
// quadratic term; all three are accounted for.
inline PtsfaResult ptsfa_loss_and_grads(const Matrix& features,
                                        const std::vector<int>& labels,
                                        const Matrix& w, const Vec& b,
                                        const AugmentationContext& ctx) {
  const int batch = features.rows;
  if (batch == 0) throw PreconditionError("ptsfa_loss_and_grads: empty batch");
  if (static_cast<int>(labels.size()) != batch)
    throw DimError("ptsfa_loss_and_grads: label count mismatch");
  const int classes = w.rows;
  const int dim = w.cols;

  PtsfaResult res;
  res.grad_w = Matrix::zeros(classes, dim);
  res.grad_b = Vec(classes, 0.0);
  res.grad_features = Matrix::zeros(batch, dim);
  const double inv_batch = 1.0 / batch;

  Vec f(dim);
  for (int n = 0; n < batch; ++n) {
    auto frow = features.row(n);
    std::copy(frow.begin(), frow.end(), f.begin());
    const int y = labels[n];
    Vec theta = ptsfa_logits(f, y, w, b, ctx);
    Vec p = softmax(theta);
    res.loss += -std::log(std::max(p[y], 1e-300)) * inv_batch;

    auto wy = w.row(y);
    const Vec& dmu = ctx.delta_mu[y];
    auto gfn = res.grad_features.row(n);
    for (int c = 0; c < classes; ++c) {
      const double g = (p[c] - (c == y ? 1.0 : 0.0)) * inv_batch;
      if (g == 0.0) continue;
      res.grad_b[c] += g;
      // d theta_c / d f = w_c for every c.
      axpy(g, w.row(c), gfn);
      axpy(g, std::span<const double>(f), res.grad_w.row(c));
      if (c != y) {
        auto wc = w.row(c);
        Vec sd = detail::sigma_times_diff(ctx, y, wc, wy);
        auto gwc = res.grad_w.row(c);
        auto gwy = res.grad_w.row(y);
        for (int d = 0; d < dim; ++d) {
          const double aug = dmu[d] + ctx.lambda * sd[d];
          gwc[d] += g * aug;
          gwy[d] -= g * aug;
        }
      }
    }
  }
  return res;
}

struct IdaResult {
  double loss = 0.0;
  Matrix grad_features;
  int participating = 0;  // samples that entered the mean
};

// Temperature-scaled cosine pull toward the intermediate-domain class means.
// Degraded classes drop out of both the numerator set and the denominator.
inline IdaResult ida_loss(const Matrix& features,
                          const std::vector<int>& labels,
                          const std::vector<Vec>& means,
                          const std::vector<bool>& degraded, double kappa) {
  if (!(kappa > 0.0)) throw PreconditionError("ida_loss: kappa must be > 0");
  const int batch = features.rows;
  if (static_cast<int>(labels.size()) != batch)
    throw DimError("ida_loss: label count mismatch");
  const int classes = static_cast<int>(means.size());
  if (static_cast<int>(degraded.size()) != classes)
    throw DimError("ida_loss: degraded flag count mismatch");
  const int dim = features.cols;

  std::vector<int> active;
  for (int c = 0; c < classes; ++c) {
    if (!degraded[c]) active.push_back(c);
  }
  if (active.empty())
    throw PreconditionError("ida_loss: no usable class means");

  std::vector<double> mean_norms(classes, 0.0);
  for (int c : active) {
    mean_norms[c] = norm(std::span<const double>(means[c]));
    if (!(mean_norms[c] > 0.0))
      throw NumericError("ida_loss: zero-norm mean for class " +
                         std::to_string(c));
  }

  IdaResult res;
  res.grad_features = Matrix::zeros(batch, dim);
  int used = 0;
  std::vector<int> used_rows;
  std::vector<Vec> row_grads;
  for (int n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y < 0 || y >= classes)
      throw RangeError("ida_loss: label out of range");
    if (degraded[y]) continue;
    auto f = features.row(n);
    const double fnorm = norm(f);
    if (!(fnorm > 0.0))
      throw NumericError("ida_loss: zero-norm feature for sample " +
                         std::to_string(n));

    Vec scores(active.size());
    std::vector<double> coss(active.size());
    int y_slot = -1;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const int c = active[a];
      coss[a] = dot(f, std::span<const double>(means[c])) /
                (fnorm * mean_norms[c]);
      scores[a] = coss[a] / kappa;
      if (c == y) y_slot = static_cast<int>(a);
    }
    Vec p = softmax(scores);
    res.loss += -std::log(std::max(p[y_slot], 1e-300));

    Vec grad(dim, 0.0);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const int c = active[a];
      const double g =
          (p[a] - (static_cast<int>(a) == y_slot ? 1.0 : 0.0)) / kappa;
      if (g == 0.0) continue;
      // d cos / d f = mu_hat / |f| - cos * f / |f|^2
      const double mscale = g / (fnorm * mean_norms[c]);
      const double fscale = -g * coss[a] / (fnorm * fnorm);
      for (int d = 0; d < dim; ++d)
        grad[d] += mscale * means[c][d] + fscale * f[d];
    }
    used_rows.push_back(n);
    row_grads.push_back(std::move(grad));
    ++used;
  }

  if (used == 0) {
    res.loss = 0.0;
    return res;
  }
  res.loss /= used;
  res.participating = used;
  const double inv_used = 1.0 / used;
  for (std::size_t r = 0; r < used_rows.size(); ++r) {
    auto dst = res.grad_features.row(used_rows[r]);
    for (int d = 0; d < dim; ++d) dst[d] = row_grads[r][d] * inv_used;
  }
  return res;
}

struct CeResult {
  double loss = 0.0;
  Matrix grad_logits;
};

// Mean softmax cross-entropy; gradient is (softmax - onehot) / batch.
inline CeResult warmup_ce(const Matrix& logits,
                          const std::vector<int>& labels) {
  const int batch = logits.rows;
  if (batch == 0) throw PreconditionError("warmup_ce: empty batch");
  if (static_cast<int>(labels.size()) != batch)
    throw DimError("warmup_ce: label count mismatch");
  CeResult res;
  res.grad_logits = Matrix::zeros(batch, logits.cols);
  const double inv_batch = 1.0 / batch;
  Vec row(logits.cols);
  for (int n = 0; n < batch; ++n) {
    auto lrow = logits.row(n);
    std::copy(lrow.begin(), lrow.end(), row.begin());
    const int y = labels[n];
    if (y < 0 || y >= logits.cols)
      throw RangeError("warmup_ce: label out of range");
    Vec p = softmax(row);
    res.loss += -std::log(std::max(p[y], 1e-300)) * inv_batch;
    auto g = res.grad_logits.row(n);
    for (int c = 0; c < logits.cols; ++c)
      g[c] = (p[c] - (c == y ? 1.0 : 0.0)) * inv_batch;
  }
  return res;
}

struct LossBreakdown {
  double ptsfa = 0.0;
  double ida_source = 0.0;
  double ida_target = 0.0;
  double total = 0.0;
  double alpha = 1.0, beta = 1.0, gamma = 1.0;
};

inline LossBreakdown total_loss(double l_ptsfa, double l_ida_s, double l_ida_t,
                                double alpha, double beta, double gamma) {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v))
      throw NumericError(std::string("total_loss: non-finite ") + name);
  };
  check(l_ptsfa, "ptsfa part");
  check(l_ida_s, "ida source part");
  check(l_ida_t, "ida target part");
  LossBreakdown b;
  b.ptsfa = l_ptsfa;
  b.ida_source = l_ida_s;
  b.ida_target = l_ida_t;
  b.alpha = alpha;
  b.beta = beta;
  b.gamma = gamma;
  b.total = alpha * l_ptsfa + beta * l_ida_s + gamma * l_ida_t;
  return b;
}

}  // namespace ptsfa
