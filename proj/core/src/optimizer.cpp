#include "strdan/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "strdan/error.hpp"

namespace strdan {

void LrSchedule::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw ValueError("lr schedule: base_lr must be positive");
  }
  if (!(decay > 0.0 && decay <= 1.0)) {
    throw ValueError("lr schedule: decay must lie in (0, 1]");
  }
  if (epochs < 1) throw ValueError("lr schedule: epochs must be >= 1");
  if (!std::is_sorted(milestones.begin(), milestones.end())) {
    throw ValueError("lr schedule: milestones must be sorted");
  }
}

double lr_at_epoch(const LrSchedule& schedule, int epoch) {
  if (epoch < 0) throw ValueError("lr_at_epoch: epoch must be >= 0");
  const auto reached = std::count_if(schedule.milestones.begin(), schedule.milestones.end(),
                                     [epoch](int m) { return epoch >= m; });
  if (reached == 0) return schedule.base_lr;
  const double raw = schedule.base_lr * std::pow(schedule.decay, static_cast<double>(reached));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.15g", raw);
  return std::strtod(buf, nullptr);
}

void amsgrad_step(OptimState& state, const std::vector<std::pair<std::string, Tensor*>>& params,
                  const ad::Gradients& grads, double lr) {
  for (const auto& [name, p] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ValueError("amsgrad_step: no gradient for '" + name + "'");
    if (!it->second.same_shape(*p)) {
      throw ValueError("amsgrad_step: gradient for '" + name + "' has shape " +
                       it->second.shape_string() + ", parameter is " + p->shape_string());
    }
    if (!it->second.all_finite()) {
      throw ValueError("amsgrad_step: non-finite gradient for '" + name + "'");
    }
  }

  const AmsgradHyper& h = state.hyper;
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);

  for (const auto& [name, p] : params) {
    const Tensor& grad = grads.at(name);
    auto [slot, inserted] = state.moments.try_emplace(name);
    Moments& mo = slot->second;
    if (inserted || !mo.m.same_shape(*p)) {
      mo = Moments{Tensor(p->rows(), p->cols()), Tensor(p->rows(), p->cols()),
                   Tensor(p->rows(), p->cols())};
    }
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double g = grad[i] + h.weight_decay * (*p)[i];
      mo.m[i] = h.beta1 * mo.m[i] + (1.0 - h.beta1) * g;
      mo.v[i] = h.beta2 * mo.v[i] + (1.0 - h.beta2) * g * g;
      mo.vmax[i] = std::max(mo.vmax[i], mo.v[i] / correction2);
      (*p)[i] -= lr * (mo.m[i] / correction1) / (std::sqrt(mo.vmax[i]) + h.eps);
    }
  }
}

void amsgrad_step(OptimState& state, ModelParams& params, const ad::Gradients& grads,
                  double lr) {
  amsgrad_step(state, params.named(), grads, lr);
}

}  // namespace strdan
