#include "ir2net/nn.hpp"

#include <algorithm>
#include <cmath>

namespace ir2net::nn {

Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(fan_in, 1))));
  auto t = Tensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<float>(dist(rng));
  return t;
}

Conv2d::Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, Conv2dParams p, Rng& rng)
    : params(p) {
  if (p.groups < 1 || in_channels % p.groups != 0) {
    throw ConfigError("conv: " + std::to_string(in_channels) + " input channels not divisible by " +
                      std::to_string(p.groups) + " groups");
  }
  if (out_channels < p.groups) throw ConfigError("conv: fewer output channels than groups");
  const auto cin_g = in_channels / p.groups;
  weight = kaiming_normal({out_channels, cin_g, kernel, kernel}, cin_g * kernel * kernel, rng);
  weight.set_requires_grad(true);
}

void Conv2d::collect(const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".weight", &weight, TensorRole::weight});
}

BinaryConv2d::BinaryConv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding,
                           bool scaling, Rng& rng) {
  layer.weight = kaiming_normal({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
  for (auto& v : layer.weight.mutable_data()) v = std::clamp(v, -1.0f, 1.0f);
  layer.weight.set_requires_grad(true);
  layer.stride = stride;
  layer.padding = padding;
  layer.scaling = scaling;
  layer.refresh_cache();
}

void BinaryConv2d::collect(const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".weight", &layer.weight, TensorRole::latent_binary_weight});
}

BatchNorm2d::BatchNorm2d(std::int64_t channels, double eps, double mom)
    : gamma(Tensor::full({channels}, 1.0f)),
      beta(Tensor::zeros({channels})),
      running_mean(Tensor::zeros({channels})),
      running_var(Tensor::full({channels}, 1.0f)),
      epsilon(eps),
      momentum(mom) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

Tensor BatchNorm2d::forward(const Tensor& x, RunMode mode) {
  BatchNormOptions opt;
  opt.training = mode.training;
  opt.update_running_stats = mode.update_bn_stats;
  opt.epsilon = epsilon;
  opt.momentum = momentum;
  return batch_norm2d(x, gamma, beta, running_mean, running_var, opt);
}

void BatchNorm2d::collect(const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".gamma", &gamma, TensorRole::bn_affine});
  out.push_back({prefix + ".beta", &beta, TensorRole::bn_affine});
  out.push_back({prefix + ".running_mean", &running_mean, TensorRole::buffer});
  out.push_back({prefix + ".running_var", &running_var, TensorRole::buffer});
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::hardtanh: return "hardtanh";
    case ActivationKind::prelu: return "prelu";
    case ActivationKind::relu: return "relu";
    case ActivationKind::identity: return "identity";
  }
  return "identity";
}

ActivationKind parse_activation(const std::string& name) {
  if (name == "hardtanh") return ActivationKind::hardtanh;
  if (name == "prelu") return ActivationKind::prelu;
  if (name == "relu") return ActivationKind::relu;
  if (name == "identity") return ActivationKind::identity;
  throw ConfigError("unknown activation '" + name + "'");
}

Activation::Activation(ActivationKind kind, std::int64_t channels) : kind_(kind) {
  if (kind == ActivationKind::prelu) {
    slope = Tensor::full({channels}, 0.25f);
    slope.set_requires_grad(true);
  }
}

Tensor Activation::forward(const Tensor& x) const {
  switch (kind_) {
    case ActivationKind::hardtanh: return hardtanh(x);
    case ActivationKind::prelu: return prelu(x, slope);
    case ActivationKind::relu: return relu(x);
    case ActivationKind::identity: return x;
  }
  return x;
}

void Activation::collect(const std::string& prefix, TensorList& out) {
  if (kind_ == ActivationKind::prelu) out.push_back({prefix + ".slope", &slope, TensorRole::weight});
}

Linear::Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features));
  std::uniform_real_distribution<double> dist(-bound, bound);
  weight = Tensor::zeros({out_features, in_features});
  for (auto& v : weight.mutable_data()) v = static_cast<float>(dist(rng));
  bias = Tensor::zeros({out_features});
  for (auto& v : bias.mutable_data()) v = static_cast<float>(dist(rng));
  weight.set_requires_grad(true);
  bias.set_requires_grad(true);
}

void Linear::collect(const std::string& prefix, TensorList& out) {
  out.push_back({prefix + ".weight", &weight, TensorRole::weight});
  out.push_back({prefix + ".bias", &bias, TensorRole::weight});
}

}  // namespace ir2net::nn
