#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ptsfa/domainstats.hpp"
#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"

namespace ptsfa {

// Curriculum schedule: a warm-up prefix, then fixed-length stages with
// selection ratios moving from source-heavy to target-heavy.
struct StagePlan {
  double sigma_s0 = 1.0;
  double sigma_t0 = 0.0;
  double delta_sigma_s = 0.05;
  double delta_sigma_t = 0.05;
  int epochs_per_stage = 5;
  int warmup_epochs = 10;
  int total_epochs = 100;

  // warmup_epochs == total_epochs expresses a warm-up-only (source CE) run.
  void validate() const {
    if (epochs_per_stage < 1)
      throw PreconditionError("StagePlan: epochs_per_stage must be >= 1");
    if (warmup_epochs < 0 || warmup_epochs > total_epochs)
      throw PreconditionError("StagePlan: warmup_epochs outside [0, total]");
    if (total_epochs < 1)
      throw PreconditionError("StagePlan: total_epochs must be >= 1");
  }

  int num_stages() const {
    if (warmup_epochs >= total_epochs) return 0;
    return (total_epochs - warmup_epochs + epochs_per_stage - 1) /
           epochs_per_stage;
  }
};

struct StageIndex {
  bool warmup = false;
  int k = -1;
};

inline StageIndex stage_of_epoch(int epoch, const StagePlan& plan) {
  plan.validate();
  if (epoch < 0 || epoch >= plan.total_epochs)
    throw RangeError("stage_of_epoch: epoch " + std::to_string(epoch) +
                     " outside [0, " + std::to_string(plan.total_epochs) + ")");
  if (epoch < plan.warmup_epochs) return {true, -1};
  return {false, (epoch - plan.warmup_epochs) / plan.epochs_per_stage};
}

// Closed-form ratios, clamped to [0, 1].
inline std::pair<double, double> ratios_for_stage(int k,
                                                  const StagePlan& plan) {
  if (k < 0) throw RangeError("ratios_for_stage: negative stage index");
  const double s = std::clamp(plan.sigma_s0 - k * plan.delta_sigma_s, 0.0, 1.0);
  const double t = std::clamp(plan.sigma_t0 + k * plan.delta_sigma_t, 0.0, 1.0);
  return {s, t};
}

// Per-class top-confidence selection. Within a class, members sort by
// confidence descending (ties by ascending bank index); round(sigma * n)
// are kept, floored at one member while sigma > 0.
inline std::vector<std::vector<int>> select_samples(const DomainBank& bank,
                                                    double sigma) {
  if (!(sigma >= 0.0 && sigma <= 1.0))
    throw PreconditionError("select_samples: sigma must be in [0, 1]");
  const int classes = bank.num_classes;
  std::vector<std::vector<int>> members(classes);
  for (int i = 0; i < bank.size(); ++i) members[bank.labels[i]].push_back(i);

  std::vector<std::vector<int>> selected(classes);
  if (sigma == 0.0) return selected;
  for (int c = 0; c < classes; ++c) {
    auto& idx = members[c];
    if (idx.empty()) continue;
    std::sort(idx.begin(), idx.end(), [&bank](int a, int b) {
      if (bank.confidences[a] != bank.confidences[b])
        return bank.confidences[a] > bank.confidences[b];
      return a < b;
    });
    auto keep = static_cast<std::size_t>(
        std::lround(sigma * static_cast<double>(idx.size())));
    keep = std::max<std::size_t>(keep, 1);
    keep = std::min(keep, idx.size());
    selected[c].assign(idx.begin(), idx.begin() + static_cast<long>(keep));
  }
  return selected;
}

// Stage-k intermediate domain: pooled statistics of the selected source and
// target members, plus the per-class augmentation direction.
struct IntermediateDomain {
  ClassStats stats;              // mu_k, Sigma_k
  std::vector<Vec> delta_mu;     // mu_k^c - mu_s^c, zero for degraded classes
  std::vector<std::vector<int>> selected_source;
  std::vector<std::vector<int>> selected_target;
  std::vector<bool> degraded;    // class had no selected members

  int num_degraded() const {
    int n = 0;
    for (bool d : degraded) n += d ? 1 : 0;
    return n;
  }
};

inline IntermediateDomain build_intermediate(const DomainBank& source,
                                             const DomainBank& target,
                                             double sigma_s, double sigma_t,
                                             const ClassStats& source_stats,
                                             CovarianceMode mode =
                                                 CovarianceMode::diagonal) {
  if (source.num_classes != target.num_classes)
    throw ConfigError("build_intermediate: class count mismatch between banks");
  const int classes = source.num_classes;
  const int dim = source.features.cols;

  IntermediateDomain dom;
  dom.selected_source = select_samples(source, sigma_s);
  dom.selected_target = select_samples(target, sigma_t);

  // Pool the union, source members first, then compute per-class stats.
  int pooled_rows = 0;
  for (int c = 0; c < classes; ++c)
    pooled_rows += static_cast<int>(dom.selected_source[c].size() +
                                    dom.selected_target[c].size());
  Matrix pooled(std::max(pooled_rows, 1), dim);
  std::vector<int> pooled_labels;
  pooled_labels.reserve(pooled_rows);
  int row = 0;
  for (int c = 0; c < classes; ++c) {
    for (int i : dom.selected_source[c]) {
      auto src = source.features.row(i);
      std::copy(src.begin(), src.end(), pooled.row(row).begin());
      pooled_labels.push_back(c);
      ++row;
    }
    for (int i : dom.selected_target[c]) {
      auto src = target.features.row(i);
      std::copy(src.begin(), src.end(), pooled.row(row).begin());
      pooled_labels.push_back(c);
      ++row;
    }
  }
  pooled.rows = row;
  pooled.data.resize(static_cast<std::size_t>(std::max(row, 0)) * dim);
  dom.stats = class_stats(pooled, pooled_labels, classes, mode);

  dom.delta_mu.assign(classes, Vec(dim, 0.0));
  dom.degraded.assign(classes, false);
  for (int c = 0; c < classes; ++c) {
    if (dom.stats.count[c] == 0) {
      // No members this stage: augmentation direction collapses to zero and
      // the source covariance stands in.
      dom.degraded[c] = true;
      dom.stats.mean[c] = source_stats.mean[c];
      dom.stats.var_diag[c] = source_stats.var_diag[c];
      if (mode == CovarianceMode::full &&
          source_stats.mode == CovarianceMode::full)
        dom.stats.cov_full[c] = source_stats.cov_full[c];
      continue;
    }
    for (int d = 0; d < dim; ++d)
      dom.delta_mu[c][d] = dom.stats.mean[c][d] - source_stats.mean[c][d];
  }
  if (dom.num_degraded() == classes)
    throw ConfigError(
        "build_intermediate: every class degraded; pseudo-labeling broke down");
  return dom;
}

}  // namespace ptsfa
