#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ptsfa/errors.hpp"
#include "ptsfa/matrix.hpp"

namespace ptsfa {

// Named view of one parameter tensor's storage.
struct TensorRef {
  std::string name;
  double* data = nullptr;
  std::size_t size = 0;
};

struct ConstTensorRef {
  std::string name;
  const double* data = nullptr;
  std::size_t size = 0;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long step = 0;
  std::vector<Vec> m;  // first moments, one buffer per tensor
  std::vector<Vec> v;  // second moments

  bool initialized() const { return !m.empty(); }

  void init_like(const std::vector<TensorRef>& params) {
    m.clear();
    v.clear();
    for (const auto& p : params) {
      m.emplace_back(p.size, 0.0);
      v.emplace_back(p.size, 0.0);
    }
  }
};

// One Adam step with decoupled weight decay (the decay term is scaled by lr,
// so lr = 0 leaves parameters and moments untouched apart from the counter).
inline void adam_update(const std::vector<TensorRef>& params,
                        const std::vector<ConstTensorRef>& grads,
                        AdamState& state, double lr) {
  if (lr < 0.0) throw PreconditionError("adam_update: negative learning rate");
  if (params.size() != grads.size())
    throw DimError("adam_update: parameter/gradient tensor counts differ");
  if (!state.initialized()) state.init_like(params);
  if (state.m.size() != params.size())
    throw DimError("adam_update: state does not match parameter list");

  state.step += 1;
  if (lr == 0.0) return;

  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    const TensorRef& p = params[t];
    const ConstTensorRef& g = grads[t];
    if (p.size != g.size)
      throw DimError("adam_update: tensor " + p.name + " shape mismatch");
    if (state.m[t].size() != p.size)
      throw DimError("adam_update: moment buffer for " + p.name +
                     " has wrong size");
    Vec& m = state.m[t];
    Vec& v = state.v[t];
    for (std::size_t i = 0; i < p.size; ++i) {
      const double gi = g.data[i];
      if (!std::isfinite(gi))
        throw NumericError("adam_update: non-finite gradient in " + p.name);
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p.data[i] -= lr * (mhat / (std::sqrt(vhat) + state.eps) +
                         state.weight_decay * p.data[i]);
    }
  }
}

// lr0 * 0.5 * (1 + cos(pi * t / T)); t = 0 gives lr0, t = T gives 0.
inline double cosine_lr(int epoch, int total, double lr0) {
  if (total < 1) throw PreconditionError("cosine_lr: total epochs < 1");
  if (epoch < 0 || epoch > total)
    throw RangeError("cosine_lr: epoch " + std::to_string(epoch) +
                     " outside [0, " + std::to_string(total) + "]");
  const double pi = 3.14159265358979323846;
  return lr0 * 0.5 *
         (1.0 + std::cos(pi * static_cast<double>(epoch) / total));
}

}  // namespace ptsfa
