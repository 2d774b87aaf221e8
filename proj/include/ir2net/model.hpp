#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ir2net/layer_info.hpp"
#include "ir2net/nn.hpp"
#include "ir2net/recover.hpp"

// Backbones with binarized interior convolutions and real first/last layers.
//
// ResNets use Bi-Real units: every 3x3 binary conv carries its own shortcut,
// act(BN(binconv(x)) + shortcut(x)). Downsampling shortcuts are
// avgpool 2x2 -> real 1x1 conv -> BN. VGG-Small stacks conv -> BN -> act with
// a 2x2 max pool closing each width stage.

namespace ir2net::model {

enum class Architecture { resnet20, resnet18, vgg_small };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

/// cifar: 3x3 stride-1 first conv. imagenet: 7x7 stride-2 conv + 3x3/2 max pool.
enum class Stem { automatic, cifar, imagenet };

std::string to_string(Stem stem);
Stem parse_stem(const std::string& name);

struct BackboneSpec {
  Architecture arch = Architecture::resnet20;
  /// Scales every channel count; width_num / width_den.
  int width_num = 1;
  int width_den = 1;
  int num_classes = 10;
  std::int64_t input_h = 32, input_w = 32;
  Stem stem = Stem::automatic;
  /// automatic: hardtanh with the cifar stem, prelu otherwise.
  std::string activation = "auto";
  recover::RecoveryConfig recovery;
  bool binarize = true;
  /// Shortcut 1x1 convs stay real unless this is set.
  bool binarize_shortcuts = false;
  bool scaling = false;

  Stem resolved_stem() const;
  nn::ActivationKind resolved_activation() const;
  std::int64_t scaled(std::int64_t channels) const;
};

struct ForwardResult {
  Tensor logits;
  /// Pre-classifier map; the fused map when a recovery head is present.
  Tensor penultimate;
  std::vector<Tensor> taps;
};

/// A conv that is binary or real depending on the spec.
struct ConvSlot {
  bool binary = false;
  nn::BinaryConv2d bconv;
  nn::Conv2d rconv;

  Tensor forward(const Tensor& x) const { return binary ? bconv.forward(x) : rconv.forward(x); }
  void collect(const std::string& prefix, nn::TensorList& out);
  std::int64_t in_channels() const { return binary ? bconv.in_channels() : rconv.in_channels(); }
  std::int64_t out_channels() const { return binary ? bconv.out_channels() : rconv.out_channels(); }
};

/// One stage step: conv -> BN (+ shortcut) -> act, optionally pooled.
struct Unit {
  ConvSlot conv;
  nn::BatchNorm2d bn;
  nn::Activation act;
  bool residual = false;
  bool downsample = false;  // residual only: avgpool + 1x1 conv + BN shortcut
  ConvSlot down_conv;
  nn::BatchNorm2d down_bn;
  bool pool_after = false;  // 2x2 max pool after the activation
  bool tap_after = false;   // output (before pooling) is a recovery tap
};

class Model {
 public:
  explicit Model(const BackboneSpec& spec, std::uint64_t seed = 0);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  ForwardResult forward(const Tensor& batch, nn::RunMode mode);

  const BackboneSpec& spec() const { return spec_; }
  const recover::TapSet& tap_set() const { return taps_; }
  const LayerList& layers() const { return layers_; }
  recover::RecoveryHead& head() { return head_; }

  /// Every named tensor: parameters, latent weights and BN buffers.
  nn::TensorList named_tensors();
  /// Clips latent binary weights to [-1, 1] and refreshes packed caches.
  void after_update();
  /// Re-derives packed caches from the latent weights as they are.
  void refresh_caches();

  int binary_conv_count() const;
  /// Real layers carrying weights, by role.
  int real_weight_layer_count(LayerRole role) const;

 private:
  void build_resnet(nn::Rng& rng, const std::vector<int>& widths, const std::vector<int>& blocks);
  void build_vgg(nn::Rng& rng);
  void build_stem(nn::Rng& rng, std::int64_t width);
  Unit make_unit(nn::Rng& rng, std::int64_t cin, std::int64_t cout, int stride, bool residual);
  ConvSlot make_conv(nn::Rng& rng, std::int64_t cin, std::int64_t cout, int kernel, int stride, int padding,
                     bool binary);
  void describe_unit(const std::string& name, const Unit& u, int stride);
  void add_layer(LayerInfo info) { layers_.push_back(std::move(info)); }

  BackboneSpec spec_;
  nn::ActivationKind act_kind_ = nn::ActivationKind::hardtanh;
  bool imagenet_stem_ = false;

  nn::Conv2d stem_conv_;
  nn::BatchNorm2d stem_bn_;
  nn::Activation stem_act_;
  std::vector<Unit> units_;
  recover::RecoveryHead head_;
  nn::Linear classifier_;
  bool global_pool_classifier_ = true;

  recover::TapSet taps_;
  LayerList layers_;
  // Shape bookkeeping while building.
  std::int64_t cur_c_ = 0, cur_h_ = 0, cur_w_ = 0;
};

}  // namespace ir2net::model
