#pragma once

#include <cstddef>
#include <vector>

#include "tensor.hpp"

namespace pctl {

// Classic momentum SGD:  v <- mu * v + g;  p <- p - lr * v.
// (The convention with the raw gradient added to the velocity, not the
// dampened variant; mu = 0 reduces to vanilla gradient descent exactly.)
//
// Parameters are grouped; each group carries its own learning rate. Velocity
// buffers are owned here, keyed by position in the flat parameter list, and
// must be used with the same parameter layout on every step.
class SgdMomentum {
 public:
  struct Group {
    double learning_rate;
    std::vector<std::size_t> members;  // indices into the flat parameter list
  };

  SgdMomentum(double momentum, std::vector<Group> groups);

  double momentum() const { return momentum_; }
  const std::vector<Group>& groups() const { return groups_; }

  // Applies one update. `params` and `grads` are parallel, in flat-list
  // order. All gradients are validated before any parameter is touched; a
  // non-finite gradient refuses the whole step.
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);

  const Tensor& velocity(std::size_t index) const { return velocity_[index]; }

 private:
  double momentum_;
  std::vector<Group> groups_;
  std::vector<double> lr_by_param_;
  std::vector<Tensor> velocity_;
  bool initialized_ = false;
};

}  // namespace pctl
