#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ir2net/layer_info.hpp"
#include "ir2net/nn.hpp"

// Information recovery heads: shallow feature maps are pooled to the
// penultimate resolution, concatenated with the penultimate map and fused
// back to its shape, either by one 1x1 conv (irec) or by a 1x1 reduction
// followed by a 3x3 group conv (cirec).

namespace ir2net::recover {

enum class RecoveryMode { none, irec, cirec };

std::string to_string(RecoveryMode mode);
RecoveryMode parse_mode(const std::string& name);

/// How cirec derives its reduced width when r does not divide C_n.
///   strict: reject the configuration.
///   floor:  reduced = floor(C_n / r); the group conv's output channels are
///           then split floor-balanced across groups.
enum class WidthRounding { strict, floor };

std::string to_string(WidthRounding rounding);
WidthRounding parse_rounding(const std::string& name);

struct RecoveryConfig {
  RecoveryMode mode = RecoveryMode::none;
  int r = 1;
  /// Group count of the 3x3 conv; ignored when groups_from_input is set.
  int g = 1;
  /// "CI": groups = input channels of the group conv (one channel per group).
  bool groups_from_input = false;
  WidthRounding rounding = WidthRounding::strict;

  std::string groups_str() const;
  /// Accepts a positive integer or "CI".
  void set_groups(const std::string& value);
};

struct TapDescriptor {
  std::string layer;
  std::int64_t channels = 0, height = 0, width = 0;
};

struct TapSet {
  std::vector<TapDescriptor> taps;  // network order
  TapDescriptor last;               // penultimate-stage output

  /// Sum of tap channels plus C_n: the width of the concatenated features.
  std::int64_t concat_channels() const;
};

/// Resolved cirec channel plan.
struct CIRecWidths {
  std::int64_t reduced = 0;  // 1x1 conv output
  std::int64_t spatial = 0;  // group conv output, C_n - reduced
  int groups = 1;
};

/// Validates divisibility and resolves "CI". Throws ConfigError.
CIRecWidths resolve_cirec(const RecoveryConfig& cfg, std::int64_t c_n);

/// The mode a head is actually built with: cirec at r = 1 backs off to irec.
RecoveryMode effective_mode(const RecoveryConfig& cfg);

/// Pools each tap to the penultimate resolution.
std::vector<Tensor> align_taps(const TapSet& taps, std::span<const Tensor> features);

/// Channel concatenation of the aligned taps followed by f_last.
Tensor concat_features(std::span<const Tensor> aligned, const Tensor& f_last);

struct ConvBnAct {
  nn::Conv2d conv;
  nn::BatchNorm2d bn;
  nn::Activation act;

  Tensor forward(const Tensor& x, nn::RunMode mode) { return act.forward(bn.forward(conv.forward(x), mode)); }
  void collect(const std::string& prefix, nn::TensorList& out);
};

struct IRecParams {
  ConvBnAct fuse;  // 1x1, concat width -> C_n
};

struct CIRecParams {
  ConvBnAct channel;  // 1x1, concat width -> reduced
  ConvBnAct spatial;  // 3x3 group conv, reduced -> C_n - reduced
};

Tensor irec_fuse(const Tensor& f_cat, IRecParams& params, nn::RunMode mode);
Tensor cirec_fuse(const Tensor& f_cat, CIRecParams& params, nn::RunMode mode);

class RecoveryHead {
 public:
  RecoveryHead() = default;
  RecoveryHead(const RecoveryConfig& cfg, const TapSet& taps, nn::ActivationKind activation, nn::Rng& rng);

  RecoveryMode mode() const { return mode_; }
  const TapSet& taps() const { return taps_; }

  /// features: one tensor per tap, in tap order. Returns the fused map, shaped as f_last.
  Tensor forward(std::span<const Tensor> features, const Tensor& f_last, nn::RunMode mode);

  void collect(const std::string& prefix, nn::TensorList& out);
  /// Costed layers of the head, including tap alignment.
  LayerList describe(const std::string& prefix) const;

  IRecParams irec;
  CIRecParams cirec;

 private:
  RecoveryMode mode_ = RecoveryMode::none;
  TapSet taps_;
  nn::ActivationKind activation_ = nn::ActivationKind::identity;
};

}  // namespace ir2net::recover
