#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ir2net/tensor.hpp"

namespace ir2net::model {
class Model;
}

// Information restriction: a training-time regularizer. The penultimate
// activations give a per-pixel attention map; pixels whose upsampled
// attention falls below lambda * mean(attention) are zeroed and the network
// also learns from the masked images.

namespace ir2net::ires {

struct IResConfig {
  double lambda = 0.15;
  double mu = 0.5;
  bool enabled = true;

  /// Throws ConfigError when lambda or mu leave [0, 1].
  void validate() const;
};

/// One sample's binary mask.
struct AttentionMask {
  std::int64_t height = 0, width = 0;
  std::vector<std::uint8_t> values;  // row-major, each 0 or 1
  double tau = 0;
  double lambda = 0;
  double keep_fraction = 1;
};

struct MaskedBatch {
  Tensor images;
  std::vector<AttentionMask> masks;
};

/// sum over channels of a^2, per sample: [N, C, h, w] -> [N, h, w]. Never recorded.
Tensor attention_map(const Tensor& a_l);

/// Upsamples each map to target size (bilinear, half-pixel) without recording.
Tensor upsample_attention(const Tensor& f_a, std::int64_t target_h, std::int64_t target_w);

/// mask = 1 where the upsampled map >= lambda * (its per-sample mean).
std::vector<AttentionMask> make_mask(const Tensor& f_a, std::int64_t target_h, std::int64_t target_w, double lambda);

/// Zeroes masked pixels in every channel. The result is data: never recorded.
MaskedBatch apply_mask(const Tensor& batch, std::span<const AttentionMask> masks);

/// mu * loss_original + (1 - mu) * loss_masked.
Tensor combined_loss(const Tensor& loss_original, const Tensor& loss_masked, double mu);

struct MaskStats {
  double keep_fraction_mean = 1;
  double tau_mean = 0;
  int forwards = 0;
};

struct StepResult {
  Tensor loss_total;
  Tensor loss_original;
  Tensor loss_masked;  // undefined when restriction is disabled
  MaskStats stats;
};

/// Both forwards record onto the caller's active tape so one backward covers
/// the combined loss. The masked forward uses batch statistics without
/// touching the running statistics.
StepResult ires_step(model::Model& model, const Tensor& batch, std::span<const int> targets, const IResConfig& cfg);

}  // namespace ir2net::ires
