#ifndef STRDAN_OPTIMIZER_HPP_
#define STRDAN_OPTIMIZER_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "strdan/autodiff.hpp"
#include "strdan/network.hpp"
#include "strdan/tensor.hpp"

namespace strdan {

// Piecewise-constant learning rate: base_lr * decay^(number of milestones
// reached), rounded to 15 significant digits: 3e-4 -> 3e-5 -> 3e-6 are the
// exact doubles of those literals.
struct LrSchedule {
  double base_lr = 3e-4;
  double decay = 0.1;
  std::vector<int> milestones{20, 40};
  int epochs = 60;

  void validate() const;
  friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

double lr_at_epoch(const LrSchedule& schedule, int epoch);

struct AmsgradHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;

  friend bool operator==(const AmsgradHyper&, const AmsgradHyper&) = default;
};

struct Moments {
  Tensor m;     // first moment
  Tensor v;     // second moment
  Tensor vmax;  // running max of the bias-corrected second moment

  friend bool operator==(const Moments&, const Moments&) = default;
};

struct OptimState {
  AmsgradHyper hyper;
  std::int64_t step = 0;
  std::map<std::string, Moments> moments;  // keyed by parameter name

  friend bool operator==(const OptimState&, const OptimState&) = default;
};

// One AMSGrad update with L2 weight decay, for every named parameter:
//
//   g     = grad + weight_decay * p
//   m     = beta1 m + (1 - beta1) g
//   v     = beta2 v + (1 - beta2) g^2
//   vmax  = max(vmax, v / (1 - beta2^t))
//   p    -= lr * (m / (1 - beta1^t)) / (sqrt(vmax) + eps)
//
// Moments are created lazily (zeros) the first time a parameter is seen.
// Throws ValueError naming the parameter if its gradient is missing,
// mis-shaped or non-finite; parameters are untouched in that case.
void amsgrad_step(OptimState& state, ModelParams& params, const ad::Gradients& grads,
                  double lr);

// Same update over an arbitrary set of named tensors.
void amsgrad_step(OptimState& state, const std::vector<std::pair<std::string, Tensor*>>& params,
                  const ad::Gradients& grads, double lr);

}  // namespace strdan

#endif  // STRDAN_OPTIMIZER_HPP_
