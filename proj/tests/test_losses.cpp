#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ptsfa/losses.hpp"
#include "ptsfa/oracle.hpp"
#include "ptsfa/rng.hpp"

using namespace ptsfa;

namespace {

struct Instance {
  Matrix features;
  std::vector<int> labels;
  Matrix w;
  Vec b;
  AugmentationContext ctx;
};

Instance random_instance(Rng& rng, int max_dim = 8, int max_classes = 4,
                         double max_lambda = 0.5, int batch = 1) {
  Instance inst;
  const int dim = 2 + static_cast<int>(rng.uniform_index(max_dim - 1));
  const int classes = 2 + static_cast<int>(rng.uniform_index(max_classes - 1));
  inst.features = Matrix(batch, dim);
  for (double& v : inst.features.data) v = rng.normal();
  inst.labels.resize(batch);
  for (int& l : inst.labels) l = static_cast<int>(rng.uniform_index(classes));
  inst.w = Matrix(classes, dim);
  for (double& v : inst.w.data) v = rng.normal();
  inst.b = Vec(classes);
  for (double& v : inst.b) v = rng.normal() * 0.5;
  inst.ctx = AugmentationContext::zero(classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int d = 0; d < dim; ++d) {
      inst.ctx.delta_mu[c][d] = rng.normal() * 0.5;
      inst.ctx.sigma_diag[c][d] = rng.uniform(0.0, 1.0);
    }
  }
  inst.ctx.lambda = rng.uniform(0.0, max_lambda);
  return inst;
}

}  // namespace

TEST_CASE("lambda_schedule") {
  CHECK(lambda_schedule(0, 100, 0.25) == 0.0);
  CHECK(lambda_schedule(100, 100, 0.25) == 0.25);
  CHECK(lambda_schedule(50, 100, 0.25) == Catch::Approx(0.125));
  CHECK_THROWS_AS(lambda_schedule(101, 100, 0.25), RangeError);
}

TEST_CASE("ptsfa_logits") {
  SECTION("no augmentation reduces to plain logits") {
    Rng rng(1);
    Instance inst = random_instance(rng);
    const int classes = inst.w.rows;
    AugmentationContext zero_ctx =
        AugmentationContext::zero(classes, inst.w.cols);
    Vec f(inst.features.row(0).begin(), inst.features.row(0).end());
    Vec theta = ptsfa_logits(f, inst.labels[0], inst.w, inst.b, zero_ctx);
    for (int c = 0; c < classes; ++c)
      CHECK(theta[c] == dot(inst.w.row(c), std::span<const double>(f)) +
                            inst.b[c]);
  }
  SECTION("hand-computed two-class example") {
    // w0=(1,0), w1=(0,1), b=0, f=(1,0), y=0, dmu=(0.5,0.5), lambda=1,
    // sigma=diag(0.2,0.2):
    //   theta_y = w0.f = 1
    //   theta_1 = 0 + (w1-w0).dmu + 0.5*(w1-w0)'Sigma(w1-w0) = 0 + 0.2
    Matrix w(2, 2);
    w(0, 0) = 1.0;
    w(1, 1) = 1.0;
    Vec b(2, 0.0);
    Vec f = {1.0, 0.0};
    AugmentationContext ctx = AugmentationContext::zero(2, 2);
    ctx.delta_mu[0] = {0.5, 0.5};
    ctx.sigma_diag[0] = {0.2, 0.2};
    ctx.lambda = 1.0;
    Vec theta = ptsfa_logits(f, 0, w, b, ctx);
    CHECK(theta[0] == Catch::Approx(1.0));
    CHECK(theta[1] == Catch::Approx(0.2));

    Matrix features(1, 2);
    features(0, 0) = 1.0;
    PtsfaResult res = ptsfa_loss_and_grads(features, {0}, w, b, ctx);
    const double expected = std::log(1.0 + std::exp(-0.8));  // 0.37110...
    CHECK(res.loss == Catch::Approx(expected).epsilon(1e-12));
    CHECK(expected == Catch::Approx(0.3711).margin(5e-5));
  }
  SECTION("zero everything gives ln C") {
    const int classes = 5;
    Matrix w = Matrix::zeros(classes, 3);
    Vec b(classes, 0.0);
    Matrix features = Matrix::zeros(1, 3);
    AugmentationContext ctx = AugmentationContext::zero(classes, 3);
    PtsfaResult res = ptsfa_loss_and_grads(features, {0}, w, b, ctx);
    CHECK(res.loss == Catch::Approx(std::log(5.0)));
  }
  SECTION("true-class logit carries no augmentation correction") {
    Rng rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      Instance inst = random_instance(rng);
      Vec f(inst.features.row(0).begin(), inst.features.row(0).end());
      const int y = inst.labels[0];
      Vec theta = ptsfa_logits(f, y, inst.w, inst.b, inst.ctx);
      CHECK(theta[y] ==
            dot(inst.w.row(y), std::span<const double>(f)) + inst.b[y]);
    }
  }
  SECTION("loss is non-decreasing in lambda") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Instance inst = random_instance(rng, 8, 4, 0.0);
      double prev = -1.0;
      for (double lambda : {0.0, 0.1, 0.2, 0.5, 1.0, 2.0}) {
        inst.ctx.lambda = lambda;
        PtsfaResult res = ptsfa_loss_and_grads(inst.features, inst.labels,
                                               inst.w, inst.b, inst.ctx);
        CHECK(res.loss >= prev - 1e-12);
        prev = res.loss;
      }
    }
  }
}

TEST_CASE("ptsfa reduction to warmup CE") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    Instance inst = random_instance(rng, 8, 4, 0.0, 3);
    // zero out the augmentation, keep nonzero covariances in the context
    for (auto& v : inst.ctx.delta_mu) std::fill(v.begin(), v.end(), 0.0);
    inst.ctx.lambda = 0.0;
    PtsfaResult res = ptsfa_loss_and_grads(inst.features, inst.labels, inst.w,
                                           inst.b, inst.ctx);
    Matrix logits(inst.features.rows, inst.w.rows);
    for (int n = 0; n < inst.features.rows; ++n)
      for (int c = 0; c < inst.w.rows; ++c)
        logits(n, c) = dot(inst.w.row(c), inst.features.row(n)) + inst.b[c];
    CeResult ce = warmup_ce(logits, inst.labels);
    CHECK(res.loss == ce.loss);  // bitwise
  }
}

TEST_CASE("ptsfa gradients match finite differences") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Instance inst = random_instance(rng, 8, 4, 0.5, 3);
    auto loss = [&]() {
      return ptsfa_loss_and_grads(inst.features, inst.labels, inst.w, inst.b,
                                  inst.ctx)
          .loss;
    };
    PtsfaResult res =
        ptsfa_loss_and_grads(inst.features, inst.labels, inst.w, inst.b,
                             inst.ctx);
    Vec fd_w = finite_diff_grad(loss, std::span<double>(inst.w.data));
    CHECK(max_grad_rel_err(res.grad_w.data, fd_w) < 1e-4);
    Vec fd_b = finite_diff_grad(loss, std::span<double>(inst.b));
    CHECK(max_grad_rel_err(res.grad_b, fd_b) < 1e-4);
    Vec fd_f = finite_diff_grad(loss, std::span<double>(inst.features.data));
    CHECK(max_grad_rel_err(res.grad_features.data, fd_f) < 1e-4);
  }
}

TEST_CASE("ptsfa with full covariance") {
  Rng rng(6);
  SECTION("diagonal-only full matrix matches diagonal mode") {
    Instance inst = random_instance(rng);
    const int classes = inst.w.rows;
    const int dim = inst.w.cols;
    AugmentationContext full = inst.ctx;
    full.sigma_full.assign(classes, Matrix::zeros(dim, dim));
    for (int c = 0; c < classes; ++c)
      for (int d = 0; d < dim; ++d)
        full.sigma_full[c](d, d) = inst.ctx.sigma_diag[c][d];
    Vec f(inst.features.row(0).begin(), inst.features.row(0).end());
    Vec a = ptsfa_logits(f, inst.labels[0], inst.w, inst.b, inst.ctx);
    Vec b2 = ptsfa_logits(f, inst.labels[0], inst.w, inst.b, full);
    for (int c = 0; c < classes; ++c)
      CHECK(a[c] == Catch::Approx(b2[c]).margin(1e-14));
  }
  SECTION("gradients with a dense PSD covariance") {
    Instance inst = random_instance(rng, 6, 3, 0.5, 2);
    const int classes = inst.w.rows;
    const int dim = inst.w.cols;
    inst.ctx.sigma_full.assign(classes, Matrix::zeros(dim, dim));
    for (int c = 0; c < classes; ++c) {
      Matrix a(dim, dim);
      for (double& v : a.data) v = rng.normal() * 0.3;
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) {
          double s = 0.0;
          for (int k = 0; k < dim; ++k) s += a(i, k) * a(j, k);
          inst.ctx.sigma_full[c](i, j) = s;
        }
    }
    auto loss = [&]() {
      return ptsfa_loss_and_grads(inst.features, inst.labels, inst.w, inst.b,
                                  inst.ctx)
          .loss;
    };
    PtsfaResult res = ptsfa_loss_and_grads(inst.features, inst.labels, inst.w,
                                           inst.b, inst.ctx);
    Vec fd_w = finite_diff_grad(loss, std::span<double>(inst.w.data));
    CHECK(max_grad_rel_err(res.grad_w.data, fd_w) < 1e-4);
  }
}

TEST_CASE("ida_loss") {
  SECTION("equal cosine to every mean gives ln C and an orthogonal gradient") {
    Matrix features(1, 2);
    features(0, 0) = 1.0;
    features(0, 1) = 1.0;
    std::vector<Vec> means = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<bool> degraded = {false, false};
    IdaResult res = ida_loss(features, {0}, means, degraded, 2.0);
    CHECK(res.loss == Catch::Approx(std::log(2.0)));
    const double along =
        res.grad_features(0, 0) * 1.0 + res.grad_features(0, 1) * 1.0;
    CHECK(std::abs(along) < 1e-12);
    // gradient must pull toward the true-class mean
    CHECK(res.grad_features(0, 0) < 0.0);
  }
  SECTION("hand-computed two-class value at kappa 2") {
    // cos to own mean 1, to the other 0:
    // loss = -log(e^{0.5} / (e^{0.5} + 1)) = log(1 + e^{-0.5})
    Matrix features(1, 2);
    features(0, 0) = 2.0;
    std::vector<Vec> means = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<bool> degraded = {false, false};
    IdaResult res = ida_loss(features, {0}, means, degraded, 2.0);
    const double expected = std::log(1.0 + std::exp(-0.5));
    CHECK(res.loss == Catch::Approx(expected).epsilon(1e-12));
    CHECK(expected == Catch::Approx(0.4741).margin(5e-5));
  }
  SECTION("gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      const int dim = 3 + static_cast<int>(rng.uniform_index(5));
      const int classes = 2 + static_cast<int>(rng.uniform_index(3));
      const int batch = 1 + static_cast<int>(rng.uniform_index(4));
      Matrix features(batch, dim);
      for (double& v : features.data) v = rng.normal() + 0.1;
      std::vector<int> labels(batch);
      for (int& l : labels) l = static_cast<int>(rng.uniform_index(classes));
      std::vector<Vec> means(classes, Vec(dim));
      for (auto& m : means)
        for (double& v : m) v = rng.normal() + 0.1;
      std::vector<bool> degraded(classes, false);
      if (classes > 2) degraded[classes - 1] = true;  // exercise exclusion
      for (int& l : labels)
        if (degraded[l]) l = 0;
      auto loss = [&]() {
        return ida_loss(features, labels, means, degraded, 2.0).loss;
      };
      IdaResult res = ida_loss(features, labels, means, degraded, 2.0);
      Vec fd = finite_diff_grad(loss, std::span<double>(features.data));
      CHECK(max_grad_rel_err(res.grad_features.data, fd) < 1e-4);
    }
  }
  SECTION("samples of degraded classes are skipped") {
    Matrix features(2, 2);
    features(0, 0) = 1.0;
    features(1, 1) = 1.0;
    std::vector<Vec> means = {{1.0, 0.0}, {0.0, 1.0}};
    std::vector<bool> degraded = {false, true};
    IdaResult res = ida_loss(features, {0, 1}, means, degraded, 2.0);
    CHECK(res.participating == 1);
    CHECK(res.grad_features(1, 0) == 0.0);
    CHECK(res.grad_features(1, 1) == 0.0);
  }
  SECTION("zero-norm feature names the sample") {
    Matrix features = Matrix::zeros(1, 2);
    std::vector<Vec> means = {{1.0, 0.0}};
    CHECK_THROWS_WITH(ida_loss(features, {0}, means, {false}, 2.0),
                      Catch::Matchers::ContainsSubstring("sample 0"));
  }
  SECTION("bad kappa rejected") {
    Matrix features(1, 2, 1.0);
    std::vector<Vec> means = {{1.0, 0.0}};
    CHECK_THROWS_AS(ida_loss(features, {0}, means, {false}, 0.0),
                    PreconditionError);
  }
}

TEST_CASE("warmup_ce") {
  SECTION("uniform logits give ln C") {
    Matrix logits(2, 4, 0.7);
    CeResult res = warmup_ce(logits, {0, 3});
    CHECK(res.loss == Catch::Approx(std::log(4.0)));
  }
  SECTION("huge true logit drives the loss to zero") {
    Matrix logits(1, 3);
    logits(0, 1) = 50.0;
    CeResult res = warmup_ce(logits, {1});
    CHECK(res.loss < 1e-10);
  }
  SECTION("gradient is (softmax - onehot) / batch, FD-checked") {
    Rng rng(8);
    Matrix logits(3, 4);
    for (double& v : logits.data) v = rng.normal();
    std::vector<int> labels = {1, 0, 3};
    CeResult res = warmup_ce(logits, labels);
    auto loss = [&]() { return warmup_ce(logits, labels).loss; };
    Vec fd = finite_diff_grad(loss, std::span<double>(logits.data));
    CHECK(max_grad_rel_err(res.grad_logits.data, fd) < 1e-4);
  }
  SECTION("empty batch rejected") {
    CHECK_THROWS_AS(warmup_ce(Matrix(0, 3), {}), PreconditionError);
  }
}

TEST_CASE("total_loss") {
  SECTION("weights apply exactly") {
    LossBreakdown b = total_loss(2.0, 4.0, 6.0, 0.5, 1.0, 1.0);
    CHECK(b.total == 11.0);
    CHECK(total_loss(1.0, 1.0, 1.0, 1.0, 1.0, 1.0).total == 3.0);
    CHECK(total_loss(7.0, 4.0, 6.0, 2.0, 0.0, 0.0).total == 14.0);
  }
  SECTION("non-finite part is named") {
    CHECK_THROWS_WITH(
        total_loss(std::nan(""), 0.0, 0.0, 1.0, 1.0, 1.0),
        Catch::Matchers::ContainsSubstring("ptsfa"));
    CHECK_THROWS_WITH(
        total_loss(0.0, 0.0, std::numeric_limits<double>::infinity(), 1.0, 1.0,
                   1.0),
        Catch::Matchers::ContainsSubstring("ida target"));
  }
}
