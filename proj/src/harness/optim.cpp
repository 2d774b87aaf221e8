#include "ir2net/optim.hpp"

#include <cmath>
#include <numbers>

namespace ir2net::harness {

Optimizer::Optimizer(OptimizerKind kind, const TrainConfig& cfg)
    : kind_(kind),
      momentum_(cfg.momentum),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_epsilon),
      weight_decay_(cfg.weight_decay) {}

Tensor& Optimizer::slot(const std::string& name, const Tensor& like) {
  auto it = state_.find(name);
  if (it == state_.end()) it = state_.emplace(name, Tensor::zeros(like.shape())).first;
  if (it->second.shape() != like.shape()) throw DimensionError("optimizer state '" + name + "' has the wrong shape");
  return it->second;
}

void Optimizer::step(const nn::TensorList& params, double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (const auto& p : params) {
    if (!p.trainable() || !p.tensor->has_grad()) continue;
    auto w = p.tensor->mutable_data();
    auto g = p.tensor->grad();
    const bool decay = weight_decay_ > 0 && p.role != nn::TensorRole::bn_affine;
    if (kind_ == OptimizerKind::sgd) {
      auto buf = slot("momentum." + p.name, *p.tensor).mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i] + (decay ? weight_decay_ * w[i] : 0.0);
        buf[i] = static_cast<float>(momentum_ * buf[i] + gi);
        w[i] = static_cast<float>(w[i] - lr * buf[i]);
      }
    } else {
      auto m = slot("adam_m." + p.name, *p.tensor).mutable_data();
      auto v = slot("adam_v." + p.name, *p.tensor).mutable_data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        double gi = g[i] + (decay ? weight_decay_ * w[i] : 0.0);
        m[i] = static_cast<float>(beta1_ * m[i] + (1 - beta1_) * gi);
        v[i] = static_cast<float>(beta2_ * v[i] + (1 - beta2_) * gi * gi);
        const double mh = m[i] / bc1, vh = v[i] / bc2;
        w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + eps_));
      }
    }
  }
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  switch (cfg.schedule) {
    case ScheduleKind::cosine:
      return 0.5 * cfg.lr * (1.0 + std::cos(std::numbers::pi * epoch / static_cast<double>(cfg.epochs)));
    case ScheduleKind::step: return cfg.lr * std::pow(cfg.step_gamma, epoch / cfg.step_size);
    case ScheduleKind::constant: return cfg.lr;
  }
  return cfg.lr;
}

}  // namespace ir2net::harness
