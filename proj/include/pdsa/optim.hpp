#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

struct AdamWConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// AdamW with decoupled weight decay: decay is applied to the parameter
/// before the moment update, so it never enters the running moments.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  AdamWConfig& config() { return cfg_; }
  std::int64_t steps() const { return t_; }

  void step(ParamStore<T>& store) {
    ++t_;
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1);
    const T b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps);
    const T wd = static_cast<T>(cfg_.weight_decay);
    for (auto& e : store) {
      if (e.m.empty()) {
        e.m.assign(e.value.size(), T(0));
        e.v.assign(e.value.size(), T(0));
      }
      for (std::size_t i = 0; i < e.value.size(); ++i) {
        const T g = e.grad[i];
        if (!std::isfinite(static_cast<double>(g)))
          throw std::runtime_error("AdamW: non-finite gradient in parameter '" + e.name + "'");
        e.value[i] -= lr * wd * e.value[i];
        e.m[i] = b1 * e.m[i] + (T(1) - b1) * g;
        e.v[i] = b2 * e.v[i] + (T(1) - b2) * g * g;
        const T mhat = e.m[i] / bc1;
        const T vhat = e.v[i] / bc2;
        e.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

/// Analytic gradient of a scalar-valued graph with respect to every
/// parameter, flattened in store entry order. `build` receives a fresh tape
/// and must return the scalar loss Var.
template <typename BuildFn>
std::vector<double> analytic_gradients(ParamStore<double>& store, BuildFn build) {
  store.zero_grad();
  Tape<double> tape;
  Var loss = build(tape);
  tape.backward(loss);
  tape.accumulate_param_grads(store);
  std::vector<double> flat;
  flat.reserve(store.total_params());
  for (const auto& e : store) flat.insert(flat.end(), e.grad.begin(), e.grad.end());
  return flat;
}

/// Central finite differences of a scalar function of the parameters,
/// flattened in store entry order. `loss_value` re-evaluates the forward
/// pass from the (perturbed) store.
template <typename LossFn>
std::vector<double> numeric_gradients(ParamStore<double>& store, LossFn loss_value,
                                      double h = 1e-5) {
  std::vector<double> flat;
  flat.reserve(store.total_params());
  for (auto& e : store) {
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double saved = e.value[i];
      e.value[i] = saved + h;
      const double fp = loss_value();
      e.value[i] = saved - h;
      const double fm = loss_value();
      e.value[i] = saved;
      flat.push_back((fp - fm) / (2.0 * h));
    }
  }
  return flat;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Per-component relative error |analytic - numeric| / max(1, |numeric|).
inline GradCheckResult compare_gradients(const std::vector<double>& analytic,
                                         const std::vector<double>& numeric) {
  if (analytic.size() != numeric.size())
    throw std::invalid_argument("compare_gradients: length mismatch");
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(1.0, std::abs(numeric[i]));
    const double err = std::abs(analytic[i] - numeric[i]) / denom;
    if (err > r.max_rel_err) {
      r.max_rel_err = err;
      r.worst_index = i;
      r.analytic = analytic[i];
      r.numeric = numeric[i];
    }
  }
  return r;
}

}  // namespace pdsa
