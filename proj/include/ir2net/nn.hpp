#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ir2net/binary.hpp"
#include "ir2net/ops.hpp"
#include "ir2net/tensor.hpp"

// Stateful layers built on the tensor ops. Single precision only; the wide
// precision path is exercised directly through the ops.

namespace ir2net::nn {

using Rng = std::mt19937_64;

struct RunMode {
  bool training = false;
  /// Training-mode batch norm folds batch moments into running stats only when set.
  bool update_bn_stats = true;
};

inline RunMode train_mode() { return {true, true}; }
inline RunMode eval_mode() { return {false, false}; }

/// Role of a tensor in the model, used by optimizers and checkpoints.
enum class TensorRole { weight, latent_binary_weight, bn_affine, buffer };

struct NamedTensor {
  std::string name;
  Tensor* tensor;
  TensorRole role;
  bool trainable() const { return role != TensorRole::buffer; }
};

using TensorList = std::vector<NamedTensor>;

/// Kaiming-normal initialisation, std = sqrt(2 / fan_in).
Tensor kaiming_normal(Shape shape, std::int64_t fan_in, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, Conv2dParams params, Rng& rng);

  Tensor forward(const Tensor& x) const { return conv2d(x, weight, params); }
  void collect(const std::string& prefix, TensorList& out);

  std::int64_t in_channels() const { return weight.dim(1) * params.groups; }
  std::int64_t out_channels() const { return weight.dim(0); }
  int kernel() const { return static_cast<int>(weight.dim(2)); }

  Tensor weight;
  Conv2dParams params;
};

class BinaryConv2d {
 public:
  BinaryConv2d() = default;
  BinaryConv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, int stride, int padding,
               bool scaling, Rng& rng);

  Tensor forward(const Tensor& x) const { return layer.forward(x); }
  void collect(const std::string& prefix, TensorList& out);

  std::int64_t in_channels() const { return layer.weight.dim(1); }
  std::int64_t out_channels() const { return layer.weight.dim(0); }
  int kernel() const { return static_cast<int>(layer.weight.dim(2)); }

  binary::BinaryConvLayer layer;
};

class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels, double epsilon = 1e-5, double momentum = 0.1);

  Tensor forward(const Tensor& x, RunMode mode);
  void collect(const std::string& prefix, TensorList& out);
  std::int64_t channels() const { return gamma.numel(); }

  Tensor gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;
};

enum class ActivationKind { hardtanh, prelu, relu, identity };

std::string to_string(ActivationKind kind);
ActivationKind parse_activation(const std::string& name);

class Activation {
 public:
  Activation() = default;
  Activation(ActivationKind kind, std::int64_t channels);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, TensorList& out);
  ActivationKind kind() const { return kind_; }

  Tensor slope;  // prelu only

 private:
  ActivationKind kind_ = ActivationKind::identity;
};

class Linear {
 public:
  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng);

  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, TensorList& out);

  Tensor weight, bias;
};

}  // namespace ir2net::nn
