#include "optim.hpp"

#include <cmath>

namespace pctl {

SgdMomentum::SgdMomentum(double momentum, std::vector<Group> groups)
    : momentum_(momentum), groups_(std::move(groups)) {
  if (!(momentum_ >= 0.0 && momentum_ < 1.0)) {
    throw Error::config("SgdMomentum: momentum " + format_double(momentum_) +
                        " outside [0, 1)");
  }
  std::size_t count = 0;
  for (const Group& g : groups_) {
    if (!(g.learning_rate > 0.0)) {
      throw Error::config("SgdMomentum: learning rate must be positive");
    }
    count += g.members.size();
  }
  lr_by_param_.assign(count, 0.0);
  std::vector<char> seen(count, 0);
  for (const Group& g : groups_) {
    for (std::size_t m : g.members) {
      if (m >= count || seen[m]) {
        throw Error::config("SgdMomentum: parameter groups must partition the parameter list");
      }
      seen[m] = 1;
      lr_by_param_[m] = g.learning_rate;
    }
  }
}

void SgdMomentum::step(const std::vector<Tensor*>& params,
                       const std::vector<const Tensor*>& grads) {
  if (params.size() != lr_by_param_.size() || grads.size() != params.size()) {
    throw Error::runtime("SgdMomentum::step: parameter list does not match group layout");
  }
  if (!initialized_) {
    velocity_.reserve(params.size());
    for (const Tensor* p : params) velocity_.emplace_back(p->rows(), p->cols());
    initialized_ = true;
  }
  // Validate everything before mutating anything: a bad gradient refuses the
  // whole step.
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(velocity_[i])) {
      throw Error::runtime("SgdMomentum::step: gradient shape " + grads[i]->shape_string() +
                           " does not match parameter " + params[i]->shape_string());
    }
    if (!grads[i]->all_finite()) {
      throw Error::runtime("SgdMomentum::step: non-finite gradient in parameter " +
                           std::to_string(i) + "; step refused");
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& v = velocity_[i];
    Tensor& p = *params[i];
    const Tensor& g = *grads[i];
    double lr = lr_by_param_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p[j] -= lr * v[j];
    }
  }
}

}  // namespace pctl
