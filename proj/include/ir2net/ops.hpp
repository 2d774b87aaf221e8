#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ir2net/tensor.hpp"

// Real-valued differentiable operators. Every function records onto the
// active tape when at least one input requires a gradient; otherwise it is a
// pure function of its inputs. Templates are instantiated for float and double.

namespace ir2net {

// -- elementwise -------------------------------------------------------------

template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// Hadamard product.
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
template <typename T> BasicTensor<T> square(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> mean(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape);
/// [N, ...] -> [N, prod(...)]
template <typename T> BasicTensor<T> flatten(const BasicTensor<T>& a);

// -- activations ---------------------------------------------------------------

template <typename T> BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T> BasicTensor<T> hardtanh(const BasicTensor<T>& x, T lo = T(-1), T hi = T(1));
/// Per-channel parametric ReLU; `slope` has one entry per channel (dim 1).
template <typename T> BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& slope);

// -- convolution / linear ------------------------------------------------------

struct Conv2dParams {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// Output channels of group `g` when `out_channels` are split across `groups`.
/// Divisible counts give the usual equal blocks; otherwise the split is
/// floor-balanced: group g owns [floor(g*C/G), floor((g+1)*C/G)).
std::int64_t group_out_begin(std::int64_t out_channels, int groups, int g);

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding);

/// Cross-correlation with zero padding.
/// input [N, Cin, H, W], weight [Cout, Cin/groups, Kh, Kw] -> [N, Cout, H', W'].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, Conv2dParams p = {});

namespace detail {
/// Accumulates d(loss)/d(input) of conv2d into `grad_input`.
template <typename T>
void conv2d_grad_input(std::span<const T> grad_out, std::span<const T> weight, const Shape& input_shape,
                       const Shape& weight_shape, Conv2dParams p, std::span<T> grad_input);
/// Accumulates d(loss)/d(weight) of conv2d into `grad_weight`.
template <typename T>
void conv2d_grad_weight(std::span<const T> grad_out, std::span<const T> input, const Shape& input_shape,
                        const Shape& weight_shape, Conv2dParams p, std::span<T> grad_weight);
}  // namespace detail

/// input [N, in], weight [out, in], optional bias [out] -> [N, out].
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias = {});

// -- normalization -------------------------------------------------------------

struct BatchNormOptions {
  bool training = true;
  /// Only meaningful in training mode: fold batch moments into running stats.
  bool update_running_stats = true;
  double epsilon = 1e-5;
  double momentum = 0.1;
};

/// Per-channel batch normalization over (N, H, W). Running statistics are
/// leaves edited in place; the unbiased batch variance feeds running_var.
template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                            const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                            BasicTensor<T>& running_var, const BatchNormOptions& opt);

// -- pooling / resampling ------------------------------------------------------

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, int kernel, int stride, int padding = 0);
/// Non-overlapping or strided average pooling without padding.
template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, int kernel, int stride);
/// Window i spans [floor(i*h/out), ceil((i+1)*h/out)) per axis.
template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& input, std::int64_t out_h, std::int64_t out_w);
/// [N, C, H, W] -> [N, C]
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input);
/// Bilinear resize, half-pixel centers (align_corners = false), edge clamped.
template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, std::int64_t out_h, std::int64_t out_w);

// -- channel plumbing ------------------------------------------------------------

/// Concatenate [N, Ci, H, W] tensors along dim 1.
template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts);
/// Channels [begin, begin+count) of [N, C, H, W].
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::int64_t begin, std::int64_t count);

// -- loss -------------------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[target].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets);

/// Runs backward on the tape that produced `loss`.
template <typename T>
void backward(const BasicTensor<T>& loss);

}  // namespace ir2net
