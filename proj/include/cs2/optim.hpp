#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cs2/tape.hpp"
#include "cs2/tensor.hpp"

namespace cs2 {

// A named trainable tensor. Names show up in optimizer diagnostics and fix
// the checkpoint payload order.
struct Param {
  std::string name;
  Tensor value;

  Param(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    value.set_requires_grad(true);
  }
};

enum class OptimKind { sgd, adam };

struct OptimizerConfig {
  OptimKind kind = OptimKind::sgd;
  double lr = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double momentum = 0.0;  // sgd only
};

// Plain SGD or Adam over a fixed parameter list. Moment buffers are created
// on the first step and thereafter must match parameter shapes.
class Optimizer {
public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {
    if (cfg_.lr <= 0.0) raise_config("optimizer: learning rate must be > 0");
  }

  std::int64_t step_count() const { return step_count_; }
  const OptimizerConfig& config() const { return cfg_; }

  // grads[i] parallels params[i]; updates values in place, deterministically.
  void step(std::vector<Param*> params,
            const std::vector<const std::vector<double>*>& grads) {
    if (params.size() != grads.size())
      raise_data("optimizer: ", params.size(), " params but ", grads.size(),
                 " grads");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (grads[i]->size() != params[i]->value.data.size())
        raise_data("optimizer: grad size mismatch for ", params[i]->name);
      for (double g : *grads[i])
        if (!std::isfinite(g))
          raise_numeric("optimizer: non-finite gradient for parameter ",
                        params[i]->name);
    }
    ++step_count_;
    if (cfg_.kind == OptimKind::sgd) {
      if (cfg_.momentum == 0.0) {
        for (std::size_t i = 0; i < params.size(); ++i) {
          auto& p = params[i]->value.data;
          const auto& g = *grads[i];
          for (std::size_t j = 0; j < p.size(); ++j) p[j] -= cfg_.lr * g[j];
        }
        return;
      }
      if (m_.empty())
        for (auto* p : params) m_.emplace_back(p->value.shape);
      if (m_.size() != params.size())
        raise_data("optimizer: parameter list changed size");
      for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->value.data;
        const auto& g = *grads[i];
        auto& v = m_[i].data;
        for (std::size_t j = 0; j < p.size(); ++j) {
          v[j] = cfg_.momentum * v[j] + g[j];
          p[j] -= cfg_.lr * v[j];
        }
      }
      return;
    }
    if (m_.empty()) {
      for (auto* p : params) {
        m_.emplace_back(p->value.shape);
        v_.emplace_back(p->value.shape);
      }
    }
    if (m_.size() != params.size())
      raise_data("optimizer: parameter list changed size");
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i]->value.data;
      const auto& g = *grads[i];
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

private:
  OptimizerConfig cfg_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor> m_, v_;
};

// Compares the tape gradient of build(tape, x) against central differences.
// Relative error per coordinate is |analytic - numeric| over
// max(|analytic|, |numeric|, 1e-8); returns the max across checked
// coordinates. max_coords < 0 checks all; otherwise a deterministic strided
// subset of that size.
struct GradCheckResult {
  double max_rel_err = 0.0;
  std::int64_t worst_coord = -1;
};

inline GradCheckResult grad_check(
    const std::function<Var(Tape&, Var)>& build, const Tensor& x, double h,
    std::int64_t max_coords = -1) {
  if (h <= 0.0) raise_data("grad_check: h must be > 0");
  std::vector<double> analytic;
  {
    Tape tape;
    Tensor xt = x;
    xt.set_requires_grad(true);
    Var xv = tape.leaf(std::move(xt));
    Var loss = build(tape, xv);
    if (tape.val(loss).numel() != 1)
      raise_data("grad_check: function must be scalar-valued");
    tape.backward(loss);
    analytic = tape.grad(xv);
  }

  const std::int64_t n = static_cast<std::int64_t>(analytic.size());
  std::int64_t stride = 1;
  if (max_coords > 0 && n > max_coords) stride = n / max_coords;

  auto eval_at = [&](const Tensor& point) {
    Tape tape;
    Tensor p = point;
    p.set_requires_grad(false);
    Var loss = build(tape, tape.leaf(std::move(p)));
    return tape.val(loss).data[0];
  };

  GradCheckResult res;
  Tensor probe = x;
  probe.set_requires_grad(false);
  for (std::int64_t i = 0; i < n; i += stride) {
    const double orig = probe.data[static_cast<std::size_t>(i)];
    probe.data[static_cast<std::size_t>(i)] = orig + h;
    const double fp = eval_at(probe);
    probe.data[static_cast<std::size_t>(i)] = orig - h;
    const double fm = eval_at(probe);
    probe.data[static_cast<std::size_t>(i)] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(a - numeric) / denom;
    if (rel > res.max_rel_err) {
      res.max_rel_err = rel;
      res.worst_coord = i;
    }
  }
  return res;
}

}  // namespace cs2
