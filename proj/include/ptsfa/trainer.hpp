#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ptsfa/dataset_io.hpp"
#include "ptsfa/domainstats.hpp"
#include "ptsfa/errors.hpp"
#include "ptsfa/losses.hpp"
#include "ptsfa/model.hpp"
#include "ptsfa/optim.hpp"
#include "ptsfa/pta.hpp"
#include "ptsfa/rng.hpp"

namespace ptsfa {

struct RunConfig {
  int total_epochs = 100;
  int warmup_epochs = 10;
  int epochs_per_stage = 5;
  int batch_source = 8;
  int batch_target = 8;
  double lr0 = 0.001;
  double weight_decay = 5e-5;
  double lambda0 = 0.25;
  double kappa = 2.0;
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double sigma_s0 = 1.0;
  double sigma_t0 = 0.0;
  double delta_sigma_s = 0.05;
  double delta_sigma_t = 0.05;
  std::uint64_t seed = 0;
  double spl_threshold0 = 0.8;
  double spl_step = 0.01;
  int spl_circles = 10;
  int spl_epochs_per_circle = 10;
  bool full_covariance = false;
  std::string source_train;
  std::string source_test;
  std::string target_train;
  std::string target_test;

  StagePlan stage_plan() const {
    StagePlan plan;
    plan.sigma_s0 = sigma_s0;
    plan.sigma_t0 = sigma_t0;
    plan.delta_sigma_s = delta_sigma_s;
    plan.delta_sigma_t = delta_sigma_t;
    plan.epochs_per_stage = epochs_per_stage;
    plan.warmup_epochs = warmup_epochs;
    plan.total_epochs = total_epochs;
    return plan;
  }

  void validate() const {
    stage_plan().validate();
    if (batch_source < 1 || batch_target < 1)
      throw ConfigError("config: batch sizes must be >= 1");
    if (lr0 < 0.0) throw ConfigError("config: lr0 must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be >= 0");
    if (lambda0 < 0.0) throw ConfigError("config: lambda0 must be >= 0");
    if (!(kappa > 0.0)) throw ConfigError("config: kappa must be > 0");
    if (spl_circles < 0 || spl_epochs_per_circle < 1)
      throw ConfigError("config: bad SPL settings");
  }
};

namespace detail {

inline bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError("config: bad boolean for key '" + key + "': " + value);
}

}  // namespace detail

// Flat key=value text; '#' starts a comment; unknown keys are fatal.
inline RunConfig parse_config(std::istream& in) {
  RunConfig cfg;
  std::map<std::string, std::function<void(const std::string&)>> setters;
  auto set_int = [](int& dst) {
    return [&dst](const std::string& v) { dst = std::stoi(v); };
  };
  auto set_double = [](double& dst) {
    return [&dst](const std::string& v) { dst = std::stod(v); };
  };
  auto set_string = [](std::string& dst) {
    return [&dst](const std::string& v) { dst = v; };
  };
  setters["total_epochs"] = set_int(cfg.total_epochs);
  setters["warmup_epochs"] = set_int(cfg.warmup_epochs);
  setters["epochs_per_stage"] = set_int(cfg.epochs_per_stage);
  setters["batch_source"] = set_int(cfg.batch_source);
  setters["batch_target"] = set_int(cfg.batch_target);
  setters["lr0"] = set_double(cfg.lr0);
  setters["weight_decay"] = set_double(cfg.weight_decay);
  setters["lambda0"] = set_double(cfg.lambda0);
  setters["kappa"] = set_double(cfg.kappa);
  setters["alpha"] = set_double(cfg.alpha);
  setters["beta"] = set_double(cfg.beta);
  setters["gamma"] = set_double(cfg.gamma);
  setters["sigma_s0"] = set_double(cfg.sigma_s0);
  setters["sigma_t0"] = set_double(cfg.sigma_t0);
  setters["delta_sigma_s"] = set_double(cfg.delta_sigma_s);
  setters["delta_sigma_t"] = set_double(cfg.delta_sigma_t);
  setters["seed"] = [&cfg](const std::string& v) {
    cfg.seed = static_cast<std::uint64_t>(std::stoull(v));
  };
  setters["spl_threshold0"] = set_double(cfg.spl_threshold0);
  setters["spl_step"] = set_double(cfg.spl_step);
  setters["spl_circles"] = set_int(cfg.spl_circles);
  setters["spl_epochs_per_circle"] = set_int(cfg.spl_epochs_per_circle);
  setters["full_covariance"] = [&cfg](const std::string& v) {
    cfg.full_covariance = detail::parse_bool(v, "full_covariance");
  };
  setters["source_train"] = set_string(cfg.source_train);
  setters["source_test"] = set_string(cfg.source_test);
  setters["target_train"] = set_string(cfg.target_train);
  setters["target_test"] = set_string(cfg.target_test);

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    strip(key);
    strip(value);
    auto it = setters.find(key);
    if (it == setters.end())
      throw ConfigError("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config: bad value for key '" + key + "': " + value);
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("load_config: cannot open " + path);
  return parse_config(in);
}

struct EpochReport {
  int epoch = 0;
  int stage = -1;  // -1 while warming up
  LossBreakdown losses;
  double source_train_acc = 0.0;
  double target_test_acc = 0.0;
  double lambda = 0.0;
  double lr = 0.0;
  std::vector<bool> degraded;  // per class, at the stage in force
};

struct StageReport {
  int stage = 0;
  int epoch = 0;  // first epoch of the stage
  double sigma_s = 0.0;
  double sigma_t = 0.0;
  std::vector<int> selected_source;   // per class
  std::vector<int> selected_target;   // per class
  std::vector<double> delta_mu_norm;  // per class
  std::vector<double> mu_norm;        // per class
  std::vector<double> sigma_trace;    // per class
  std::vector<double> dist_to_target; // |mu_k^c - mu_t^c| per class
  std::vector<bool> degraded;
};

struct EvalResult {
  double accuracy = 0.0;
  std::vector<std::vector<int>> confusion;  // [true][predicted]
};

inline EvalResult evaluate(const ModelParams& params, const Dataset& dataset) {
  EvalResult res;
  const int classes = params.num_classes();
  res.confusion.assign(classes, std::vector<int>(classes, 0));
  int correct = 0;
  for (const PointCloudSample& s : dataset.samples) {
    Prediction pred = classify(encode(s.points, params), params);
    res.confusion[s.label][pred.predicted] += 1;
    if (pred.predicted == s.label) ++correct;
  }
  res.accuracy =
      static_cast<double>(correct) / static_cast<double>(dataset.samples.size());
  return res;
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochReport> epochs;
  std::vector<StageReport> stages;
};

namespace detail {

// Seed streams, kept apart so e.g. a different target set cannot perturb
// the source-side randomness.
inline constexpr std::uint64_t kStreamInit = 1;
inline constexpr std::uint64_t kStreamSourceShuffle = 2;
inline constexpr std::uint64_t kStreamTargetShuffle = 3;
inline constexpr std::uint64_t kStreamSpl = 4;

// Forward a batch of samples, keeping caches for the backward pass.
inline Matrix forward_batch(const Dataset& data, const std::vector<int>& idx,
                            const ModelParams& params,
                            std::vector<EncodeCache>& caches) {
  const int feat = params.feature_dim();
  Matrix features(static_cast<int>(idx.size()), feat);
  caches.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Vec f = encode_cached(data.samples[idx[i]].points, params, caches[i]);
    std::copy(f.begin(), f.end(), features.row(static_cast<int>(i)).begin());
  }
  return features;
}

inline std::vector<int> batch_indices(const std::vector<int>& perm, int batch,
                                      int batch_size, int n) {
  std::vector<int> idx(batch_size);
  for (int r = 0; r < batch_size; ++r)
    idx[r] = perm[static_cast<std::size_t>((batch * batch_size + r) % n)];
  return idx;
}

}  // namespace detail

// The full run: warm-up on source CE, then staged PTSFA + IDA training with
// per-stage pool refreshes. Deterministic in config.seed.
inline TrainResult train(const RunConfig& cfg, const Dataset& source_train,
                         const Dataset& target_train,
                         const Dataset& target_test) {
  cfg.validate();
  if (source_train.num_classes != target_train.num_classes ||
      source_train.num_classes != target_test.num_classes)
    throw ConfigError("train: datasets disagree on class count");
  if (source_train.points_per_sample != target_train.points_per_sample ||
      source_train.points_per_sample != target_test.points_per_sample)
    throw ConfigError("train: datasets disagree on points per sample");

  const int classes = source_train.num_classes;
  const int ns = static_cast<int>(source_train.samples.size());
  const int nt = static_cast<int>(target_train.samples.size());
  const StagePlan plan = cfg.stage_plan();
  const CovarianceMode cov_mode =
      cfg.full_covariance ? CovarianceMode::full : CovarianceMode::diagonal;

  TrainResult result;
  result.params =
      ModelParams::init(classes, mix_seed(cfg.seed, detail::kStreamInit));
  ModelParams& params = result.params;
  const int feat = params.feature_dim();

  AdamState adam;
  adam.weight_decay = cfg.weight_decay;
  adam.init_like(params.tensors());

  // Stage state, rebuilt at each stage boundary.
  int current_stage = -2;
  AugmentationContext ctx = AugmentationContext::zero(classes, feat);
  std::vector<bool> stage_degraded(classes, false);
  std::vector<int> target_pseudo(nt, 0);
  std::vector<Vec> stage_means;

  std::vector<EncodeCache> src_caches, tgt_caches;

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.total_epochs, cfg.lr0);
    const double lambda =
        lambda_schedule(epoch, cfg.total_epochs, cfg.lambda0);
    const bool warmup = epoch < cfg.warmup_epochs;

    EpochReport report;
    report.epoch = epoch;
    report.lr = lr;
    report.lambda = lambda;

    if (warmup) {
      report.stage = -1;
      report.degraded.assign(classes, false);
      Rng shuffle_rng(
          mix_seed(mix_seed(cfg.seed, detail::kStreamSourceShuffle), epoch));
      std::vector<int> perm = shuffle_rng.permutation(ns);
      const int batches = (ns + cfg.batch_source - 1) / cfg.batch_source;
      double ce_sum = 0.0;
      for (int bidx = 0; bidx < batches; ++bidx) {
        std::vector<int> idx =
            detail::batch_indices(perm, bidx, cfg.batch_source, ns);
        Matrix features =
            detail::forward_batch(source_train, idx, params, src_caches);
        Matrix logits = affine_forward(features, params.cls_w, params.cls_b);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
          labels[i] = source_train.samples[idx[i]].label;
        CeResult ce = warmup_ce(logits, labels);
        ce_sum += ce.loss;

        ModelGrads grads = ModelParams::zeros_like(params);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          Vec grad_logits(ce.grad_logits.row(static_cast<int>(i)).begin(),
                          ce.grad_logits.row(static_cast<int>(i)).end());
          Vec f(features.row(static_cast<int>(i)).begin(),
                features.row(static_cast<int>(i)).end());
          Vec grad_f(feat, 0.0);
          classifier_backward(grad_logits, f, params, grads, grad_f);
          encode_backward(grad_f, source_train.samples[idx[i]].points, params,
                          src_caches[i], grads);
        }
        adam_update(params.tensors(), std::as_const(grads).tensors(), adam, lr);
      }
      // Warm-up CE lands in the ptsfa column (it is the lambda=0, dmu=0
      // degenerate case of that loss).
      report.losses =
          total_loss(ce_sum / batches, 0.0, 0.0, cfg.alpha, cfg.beta, cfg.gamma);
    } else {
      const StageIndex stage = stage_of_epoch(epoch, plan);
      report.stage = stage.k;
      if (stage.k != current_stage) {
        current_stage = stage.k;
        DomainBank source_bank =
            refresh_bank(source_train, params, Domain::source, stage.k);
        DomainBank target_bank =
            refresh_bank(target_train, params, Domain::target, stage.k);
        ClassStats source_stats = class_stats(source_bank, cov_mode);
        auto [sigma_s, sigma_t] = ratios_for_stage(stage.k, plan);
        IntermediateDomain dom =
            build_intermediate(source_bank, target_bank, sigma_s, sigma_t,
                               source_stats, cov_mode);

        ctx.delta_mu = dom.delta_mu;
        ctx.sigma_diag = dom.stats.var_diag;
        if (cov_mode == CovarianceMode::full) ctx.sigma_full = dom.stats.cov_full;
        stage_degraded = dom.degraded;
        stage_means = dom.stats.mean;
        target_pseudo = target_bank.labels;

        StageReport sr;
        sr.stage = stage.k;
        sr.epoch = epoch;
        sr.sigma_s = sigma_s;
        sr.sigma_t = sigma_t;
        sr.degraded = dom.degraded;
        ClassStats target_stats = class_stats(target_bank, cov_mode);
        for (int c = 0; c < classes; ++c) {
          sr.selected_source.push_back(
              static_cast<int>(dom.selected_source[c].size()));
          sr.selected_target.push_back(
              static_cast<int>(dom.selected_target[c].size()));
          sr.delta_mu_norm.push_back(norm(std::span<const double>(dom.delta_mu[c])));
          sr.mu_norm.push_back(norm(std::span<const double>(dom.stats.mean[c])));
          double trace = 0.0;
          for (double v : dom.stats.var_diag[c]) trace += v;
          sr.sigma_trace.push_back(trace);
          double dist = 0.0;
          if (target_stats.count[c] > 0) {
            Vec diff(feat);
            for (int d = 0; d < feat; ++d)
              diff[d] = dom.stats.mean[c][d] - target_stats.mean[c][d];
            dist = norm(std::span<const double>(diff));
          }
          sr.dist_to_target.push_back(dist);
        }
        result.stages.push_back(std::move(sr));
      }
      report.degraded = stage_degraded;
      ctx.lambda = lambda;

      Rng src_rng(
          mix_seed(mix_seed(cfg.seed, detail::kStreamSourceShuffle), epoch));
      Rng tgt_rng(
          mix_seed(mix_seed(cfg.seed, detail::kStreamTargetShuffle), epoch));
      std::vector<int> src_perm = src_rng.permutation(ns);
      std::vector<int> tgt_perm = tgt_rng.permutation(nt);
      const int driving = std::max(
          (ns + cfg.batch_source - 1) / cfg.batch_source,
          (nt + cfg.batch_target - 1) / cfg.batch_target);

      double sum_ptsfa = 0.0, sum_ida_s = 0.0, sum_ida_t = 0.0, sum_total = 0.0;
      for (int bidx = 0; bidx < driving; ++bidx) {
        std::vector<int> src_idx =
            detail::batch_indices(src_perm, bidx, cfg.batch_source, ns);
        std::vector<int> tgt_idx =
            detail::batch_indices(tgt_perm, bidx, cfg.batch_target, nt);

        // Components with zero weight are skipped outright (and the target
        // forward pass with them when gamma is 0).
        Matrix src_features =
            detail::forward_batch(source_train, src_idx, params, src_caches);
        std::vector<int> src_labels(src_idx.size());
        for (std::size_t i = 0; i < src_idx.size(); ++i)
          src_labels[i] = source_train.samples[src_idx[i]].label;

        PtsfaResult ptsfa;
        if (cfg.alpha != 0.0) {
          ptsfa = ptsfa_loss_and_grads(src_features, src_labels, params.cls_w,
                                       params.cls_b, ctx);
        } else {
          ptsfa.grad_w = Matrix::zeros(classes, feat);
          ptsfa.grad_b = Vec(classes, 0.0);
          ptsfa.grad_features = Matrix::zeros(src_features.rows, feat);
        }
        IdaResult ida_s;
        if (cfg.beta != 0.0) {
          ida_s = ida_loss(src_features, src_labels, stage_means,
                           stage_degraded, cfg.kappa);
        } else {
          ida_s.grad_features = Matrix::zeros(src_features.rows, feat);
        }
        IdaResult ida_t;
        Matrix tgt_features;
        std::vector<int> tgt_labels(tgt_idx.size());
        if (cfg.gamma != 0.0) {
          tgt_features =
              detail::forward_batch(target_train, tgt_idx, params, tgt_caches);
          for (std::size_t i = 0; i < tgt_idx.size(); ++i)
            tgt_labels[i] = target_pseudo[tgt_idx[i]];
          ida_t = ida_loss(tgt_features, tgt_labels, stage_means,
                           stage_degraded, cfg.kappa);
        } else {
          ida_t.grad_features =
              Matrix::zeros(static_cast<int>(tgt_idx.size()), feat);
        }
        LossBreakdown breakdown =
            total_loss(ptsfa.loss, ida_s.loss, ida_t.loss, cfg.alpha, cfg.beta,
                       cfg.gamma);
        sum_ptsfa += breakdown.ptsfa;
        sum_ida_s += breakdown.ida_source;
        sum_ida_t += breakdown.ida_target;
        sum_total += breakdown.total;

        ModelGrads grads = ModelParams::zeros_like(params);
        for (int c = 0; c < classes; ++c) {
          axpy(cfg.alpha, ptsfa.grad_w.row(c), grads.cls_w.row(c));
          grads.cls_b[c] += cfg.alpha * ptsfa.grad_b[c];
        }
        Vec grad_f(feat);
        for (std::size_t i = 0; i < src_idx.size(); ++i) {
          for (int d = 0; d < feat; ++d)
            grad_f[d] =
                cfg.alpha * ptsfa.grad_features(static_cast<int>(i), d) +
                cfg.beta * ida_s.grad_features(static_cast<int>(i), d);
          encode_backward(grad_f, source_train.samples[src_idx[i]].points,
                          params, src_caches[i], grads);
        }
        if (cfg.gamma != 0.0) {
          for (std::size_t i = 0; i < tgt_idx.size(); ++i) {
            for (int d = 0; d < feat; ++d)
              grad_f[d] =
                  cfg.gamma * ida_t.grad_features(static_cast<int>(i), d);
            encode_backward(grad_f, target_train.samples[tgt_idx[i]].points,
                            params, tgt_caches[i], grads);
          }
        }
        adam_update(params.tensors(), std::as_const(grads).tensors(), adam, lr);
      }
      report.losses.ptsfa = sum_ptsfa / driving;
      report.losses.ida_source = sum_ida_s / driving;
      report.losses.ida_target = sum_ida_t / driving;
      report.losses.total = sum_total / driving;
      report.losses.alpha = cfg.alpha;
      report.losses.beta = cfg.beta;
      report.losses.gamma = cfg.gamma;
    }

    report.source_train_acc = evaluate(params, source_train).accuracy;
    report.target_test_acc = evaluate(params, target_test).accuracy;
    result.epochs.push_back(std::move(report));
  }
  return result;
}

// Convenience wrapper loading the splits named by the config.
inline TrainResult train(const RunConfig& cfg) {
  if (cfg.source_train.empty() || cfg.target_train.empty() ||
      cfg.target_test.empty())
    throw ConfigError("train: source_train, target_train and target_test paths are required");
  Dataset src = read_dataset(cfg.source_train);
  Dataset tgt_train = read_dataset(cfg.target_train);
  Dataset tgt_test = read_dataset(cfg.target_test);
  return train(cfg, src, tgt_train, tgt_test);
}

struct SplCircleReport {
  int circle = 0;
  double threshold = 0.0;
  int selected = 0;
  double target_test_acc = 0.0;
};

struct SplResult {
  ModelParams params;
  std::vector<SplCircleReport> circles;
};

// Self-paced fine-tuning: each circle re-labels the target pool, admits
// samples whose confidence clears the rising threshold, and trains plain CE
// on all source plus the admitted pseudo-labeled target samples.
inline SplResult spl_finetune(const ModelParams& initial, const RunConfig& cfg,
                              const Dataset& source_train,
                              const Dataset& target_train,
                              const Dataset& target_test) {
  cfg.validate();
  SplResult result;
  result.params = initial;
  ModelParams& params = result.params;
  const int feat = params.feature_dim();
  const int ns = static_cast<int>(source_train.samples.size());
  const int total_epochs = cfg.spl_circles * cfg.spl_epochs_per_circle;

  AdamState adam;
  adam.weight_decay = cfg.weight_decay;
  adam.init_like(params.tensors());

  std::vector<EncodeCache> caches;
  const int batch_size = cfg.batch_source + cfg.batch_target;

  for (int circle = 0; circle < cfg.spl_circles; ++circle) {
    const double threshold = cfg.spl_threshold0 + circle * cfg.spl_step;
    DomainBank bank = refresh_bank(target_train, params, Domain::target, circle);

    // Union of all source samples (true labels) and confident target
    // samples (pseudo-labels). Index < ns means source.
    std::vector<int> pool;
    std::vector<int> pool_labels;
    for (int i = 0; i < ns; ++i) {
      pool.push_back(i);
      pool_labels.push_back(source_train.samples[i].label);
    }
    int selected = 0;
    for (int i = 0; i < bank.size(); ++i) {
      if (bank.confidences[i] >= threshold) {
        pool.push_back(ns + i);
        pool_labels.push_back(bank.labels[i]);
        ++selected;
      }
    }

    SplCircleReport cr;
    cr.circle = circle;
    cr.threshold = threshold;
    cr.selected = selected;

    const int n_pool = static_cast<int>(pool.size());
    for (int e = 0; e < cfg.spl_epochs_per_circle; ++e) {
      const int global_epoch = circle * cfg.spl_epochs_per_circle + e;
      const double lr = cosine_lr(global_epoch, total_epochs, cfg.lr0);
      Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, detail::kStreamSpl),
                               static_cast<std::uint64_t>(global_epoch)));
      std::vector<int> order(n_pool);
      for (int i = 0; i < n_pool; ++i) order[i] = i;
      shuffle_rng.shuffle(order);
      const int batches = (n_pool + batch_size - 1) / batch_size;
      for (int bidx = 0; bidx < batches; ++bidx) {
        std::vector<int> slots =
            detail::batch_indices(order, bidx, batch_size, n_pool);
        Matrix features(static_cast<int>(slots.size()), feat);
        caches.resize(slots.size());
        std::vector<int> labels(slots.size());
        std::vector<const Matrix*> points(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) {
          const int p = pool[slots[i]];
          labels[i] = pool_labels[slots[i]];
          points[i] = p < ns ? &source_train.samples[p].points
                             : &target_train.samples[p - ns].points;
          Vec f = encode_cached(*points[i], params, caches[i]);
          std::copy(f.begin(), f.end(),
                    features.row(static_cast<int>(i)).begin());
        }
        Matrix logits = affine_forward(features, params.cls_w, params.cls_b);
        CeResult ce = warmup_ce(logits, labels);
        ModelGrads grads = ModelParams::zeros_like(params);
        for (std::size_t i = 0; i < slots.size(); ++i) {
          Vec grad_logits(ce.grad_logits.row(static_cast<int>(i)).begin(),
                          ce.grad_logits.row(static_cast<int>(i)).end());
          Vec f(features.row(static_cast<int>(i)).begin(),
                features.row(static_cast<int>(i)).end());
          Vec grad_f(feat, 0.0);
          classifier_backward(grad_logits, f, params, grads, grad_f);
          encode_backward(grad_f, *points[i], params, caches[i], grads);
        }
        adam_update(params.tensors(), std::as_const(grads).tensors(), adam, lr);
      }
    }
    cr.target_test_acc = evaluate(params, target_test).accuracy;
    result.circles.push_back(cr);
  }
  return result;
}

// metrics.csv: epoch,stage,L_PTSFA,L_IDA_s,L_IDA_t,total,lr,lambda,src_acc,tgt_acc
inline void write_metrics_csv(const std::vector<EpochReport>& reports,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_metrics_csv: cannot open " + path);
  out << "epoch,stage,L_PTSFA,L_IDA_s,L_IDA_t,total,lr,lambda,src_acc,tgt_acc\n";
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const EpochReport& r : reports) {
    out << r.epoch << ',' << r.stage << ',' << fmt(r.losses.ptsfa) << ','
        << fmt(r.losses.ida_source) << ',' << fmt(r.losses.ida_target) << ','
        << fmt(r.losses.total) << ',' << fmt(r.lr) << ',' << fmt(r.lambda)
        << ',' << fmt(r.source_train_acc) << ',' << fmt(r.target_test_acc)
        << '\n';
  }
  if (!out) throw IoError("write_metrics_csv: write failed for " + path);
}

inline void write_stages_csv(const std::vector<StageReport>& reports,
                             int classes, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_stages_csv: cannot open " + path);
  out << "stage,epoch,sigma_s,sigma_t";
  for (int c = 0; c < classes; ++c)
    out << ",sel_src_" << c << ",sel_tgt_" << c << ",dmu_norm_" << c
        << ",mu_norm_" << c << ",sigma_trace_" << c << ",dist_tgt_" << c
        << ",degraded_" << c;
  out << '\n';
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const StageReport& r : reports) {
    out << r.stage << ',' << r.epoch << ',' << fmt(r.sigma_s) << ','
        << fmt(r.sigma_t);
    for (int c = 0; c < classes; ++c) {
      out << ',' << r.selected_source[c] << ',' << r.selected_target[c] << ','
          << fmt(r.delta_mu_norm[c]) << ',' << fmt(r.mu_norm[c]) << ','
          << fmt(r.sigma_trace[c]) << ',' << fmt(r.dist_to_target[c]) << ','
          << (r.degraded[c] ? 1 : 0);
    }
    out << '\n';
  }
}

inline void write_confusion_csv(const EvalResult& eval,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_confusion_csv: cannot open " + path);
  const int classes = static_cast<int>(eval.confusion.size());
  out << "true_class";
  for (int c = 0; c < classes; ++c) out << ",pred_" << c;
  out << '\n';
  for (int r = 0; r < classes; ++r) {
    out << r;
    for (int c = 0; c < classes; ++c) out << ',' << eval.confusion[r][c];
    out << '\n';
  }
}

inline void write_spl_csv(const std::vector<SplCircleReport>& circles,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("write_spl_csv: cannot open " + path);
  out << "circle,threshold,selected,tgt_acc\n";
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const SplCircleReport& c : circles)
    out << c.circle << ',' << fmt(c.threshold) << ',' << c.selected << ','
        << fmt(c.target_test_acc) << '\n';
}

}  // namespace ptsfa
