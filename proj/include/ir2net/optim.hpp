#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ir2net/config.hpp"
#include "ir2net/nn.hpp"

namespace ir2net::harness {

/// SGD (heavy-ball momentum) or Adam over the trainable entries of a TensorList.
/// State is keyed by tensor name so it survives checkpointing.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, const TrainConfig& cfg);

  /// Applies one update at learning rate `lr` using the accumulated grads.
  void step(const nn::TensorList& params, double lr);

  OptimizerKind kind() const { return kind_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }

  /// Named state tensors ("<slot>.<param name>"), in a deterministic order.
  std::map<std::string, Tensor>& state() { return state_; }
  const std::map<std::string, Tensor>& state() const { return state_; }

 private:
  Tensor& slot(const std::string& name, const Tensor& like);

  OptimizerKind kind_;
  double momentum_, beta1_, beta2_, eps_, weight_decay_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor> state_;
};

/// Learning rate for a 0-based epoch.
double scheduled_lr(const TrainConfig& cfg, int epoch);

}  // namespace ir2net::harness
