#include "ir2net/model.hpp"

#include <algorithm>

#include "ir2net/counters.hpp"

namespace ir2net::model {

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::resnet20: return "resnet20";
    case Architecture::resnet18: return "resnet18";
    case Architecture::vgg_small: return "vgg_small";
  }
  return "resnet20";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "resnet20") return Architecture::resnet20;
  if (name == "resnet18") return Architecture::resnet18;
  if (name == "vgg_small") return Architecture::vgg_small;
  throw ConfigError("unknown backbone '" + name + "' (resnet20, resnet18, vgg_small)");
}

std::string to_string(Stem stem) {
  switch (stem) {
    case Stem::automatic: return "auto";
    case Stem::cifar: return "cifar";
    case Stem::imagenet: return "imagenet";
  }
  return "auto";
}

Stem parse_stem(const std::string& name) {
  if (name == "auto") return Stem::automatic;
  if (name == "cifar") return Stem::cifar;
  if (name == "imagenet") return Stem::imagenet;
  throw ConfigError("unknown stem '" + name + "' (auto, cifar, imagenet)");
}

Stem BackboneSpec::resolved_stem() const {
  if (stem != Stem::automatic) return stem;
  return arch == Architecture::resnet18 && input_h >= 128 && input_w >= 128 ? Stem::imagenet : Stem::cifar;
}

nn::ActivationKind BackboneSpec::resolved_activation() const {
  if (activation == "auto") {
    return resolved_stem() == Stem::cifar ? nn::ActivationKind::hardtanh : nn::ActivationKind::prelu;
  }
  return nn::parse_activation(activation);
}

std::int64_t BackboneSpec::scaled(std::int64_t channels) const {
  if (width_num < 1 || width_den < 1) throw ConfigError("width multiplier must be positive");
  if ((channels * width_num) % width_den != 0) {
    throw ConfigError("width multiplier " + std::to_string(width_num) + "/" + std::to_string(width_den) +
                      " does not give an integer width for " + std::to_string(channels) + " channels");
  }
  const auto c = channels * width_num / width_den;
  if (c < 1) throw ConfigError("width multiplier leaves no channels");
  return c;
}

void ConvSlot::collect(const std::string& prefix, nn::TensorList& out) {
  if (binary) {
    bconv.collect(prefix, out);
  } else {
    rconv.collect(prefix, out);
  }
}

Model::Model(const BackboneSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec.num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (spec.input_h < 1 || spec.input_w < 1) throw ConfigError("input size must be positive");
  act_kind_ = spec.resolved_activation();
  imagenet_stem_ = spec.resolved_stem() == Stem::imagenet;
  nn::Rng rng(seed);
  switch (spec.arch) {
    case Architecture::resnet20: build_resnet(rng, {16, 32, 64}, {3, 3, 3}); break;
    case Architecture::resnet18: build_resnet(rng, {64, 128, 256, 512}, {2, 2, 2, 2}); break;
    case Architecture::vgg_small: build_vgg(rng); break;
  }

  head_ = recover::RecoveryHead(spec.recovery, taps_, act_kind_, rng);
  for (auto& l : head_.describe("head")) add_layer(std::move(l));

  const auto& last = taps_.last;
  std::int64_t features = last.channels;
  if (global_pool_classifier_) {
    LayerInfo gp;
    gp.name = "classifier.pool";
    gp.kind = LayerKind::global_pool;
    gp.role = LayerRole::classifier;
    gp.in_channels = gp.out_channels = last.channels;
    gp.in_h = last.height;
    gp.in_w = last.width;
    add_layer(gp);
  } else {
    features = last.channels * last.height * last.width;
  }
  classifier_ = nn::Linear(features, spec.num_classes, rng);
  LayerInfo fc;
  fc.name = "classifier.fc";
  fc.kind = LayerKind::linear;
  fc.role = LayerRole::classifier;
  fc.in_channels = features;
  fc.out_channels = spec.num_classes;
  add_layer(fc);
}

ConvSlot Model::make_conv(nn::Rng& rng, std::int64_t cin, std::int64_t cout, int kernel, int stride, int padding,
                          bool binary) {
  ConvSlot s;
  s.binary = binary;
  if (binary) {
    s.bconv = nn::BinaryConv2d(cin, cout, kernel, stride, padding, spec_.scaling, rng);
  } else {
    s.rconv = nn::Conv2d(cin, cout, kernel, {stride, padding, 1}, rng);
  }
  return s;
}

void Model::build_stem(nn::Rng& rng, std::int64_t width) {
  const int k = imagenet_stem_ ? 7 : 3;
  const int stride = imagenet_stem_ ? 2 : 1;
  stem_conv_ = nn::Conv2d(3, width, k, {stride, k / 2, 1}, rng);
  stem_bn_ = nn::BatchNorm2d(width);
  stem_act_ = nn::Activation(act_kind_, width);

  LayerInfo conv;
  conv.name = "stem.conv";
  conv.kind = LayerKind::conv;
  conv.role = LayerRole::stem;
  conv.in_channels = 3;
  conv.out_channels = width;
  conv.in_h = spec_.input_h;
  conv.in_w = spec_.input_w;
  conv.out_h = conv_out_size(spec_.input_h, k, stride, k / 2);
  conv.out_w = conv_out_size(spec_.input_w, k, stride, k / 2);
  conv.kernel = k;
  conv.stride = stride;
  add_layer(conv);
  LayerInfo bn = conv;
  bn.name = "stem.bn";
  bn.kind = LayerKind::batchnorm;
  bn.in_channels = width;
  bn.in_h = conv.out_h;
  bn.in_w = conv.out_w;
  bn.kernel = 1;
  bn.stride = 1;
  add_layer(bn);
  LayerInfo act = bn;
  act.name = "stem.act";
  act.kind = LayerKind::activation;
  add_layer(act);

  cur_c_ = width;
  cur_h_ = conv.out_h;
  cur_w_ = conv.out_w;
  taps_.taps.push_back({"stem", cur_c_, cur_h_, cur_w_});

  if (imagenet_stem_) {
    LayerInfo pool = act;
    pool.name = "stem.pool";
    pool.kind = LayerKind::max_pool;
    pool.kernel = 3;
    pool.stride = 2;
    pool.out_h = conv_out_size(cur_h_, 3, 2, 1);
    pool.out_w = conv_out_size(cur_w_, 3, 2, 1);
    add_layer(pool);
    cur_h_ = pool.out_h;
    cur_w_ = pool.out_w;
  }
}

Unit Model::make_unit(nn::Rng& rng, std::int64_t cin, std::int64_t cout, int stride, bool residual) {
  Unit u;
  u.conv = make_conv(rng, cin, cout, 3, stride, 1, spec_.binarize);
  u.bn = nn::BatchNorm2d(cout);
  u.act = nn::Activation(act_kind_, cout);
  u.residual = residual;
  if (residual && (stride != 1 || cin != cout)) {
    if (stride != 1 && (cur_h_ % stride != 0 || cur_w_ % stride != 0)) {
      throw ConfigError("downsampling needs even spatial size, got " + std::to_string(cur_h_) + "x" +
                        std::to_string(cur_w_));
    }
    u.downsample = true;
    u.down_conv = make_conv(rng, cin, cout, 1, 1, 0, spec_.binarize && spec_.binarize_shortcuts);
    u.down_bn = nn::BatchNorm2d(cout);
  }
  return u;
}

void Model::describe_unit(const std::string& name, const Unit& u, int stride) {
  const auto cin = u.conv.in_channels(), cout = u.conv.out_channels();
  const auto oh = conv_out_size(cur_h_, 3, stride, 1), ow = conv_out_size(cur_w_, 3, stride, 1);

  LayerInfo conv;
  conv.name = name + ".conv";
  conv.kind = LayerKind::conv;
  conv.role = LayerRole::body;
  conv.binarized = u.conv.binary;
  conv.in_channels = cin;
  conv.out_channels = cout;
  conv.in_h = cur_h_;
  conv.in_w = cur_w_;
  conv.out_h = oh;
  conv.out_w = ow;
  conv.kernel = 3;
  conv.stride = stride;
  add_layer(conv);

  LayerInfo bn;
  bn.name = name + ".bn";
  bn.kind = LayerKind::batchnorm;
  bn.role = LayerRole::body;
  bn.in_channels = bn.out_channels = cout;
  bn.in_h = bn.out_h = oh;
  bn.in_w = bn.out_w = ow;
  add_layer(bn);

  if (u.downsample) {
    std::int64_t sh = cur_h_, sw = cur_w_;
    if (stride != 1) {
      LayerInfo pool;
      pool.name = name + ".shortcut.pool";
      pool.kind = LayerKind::avg_pool;
      pool.role = LayerRole::shortcut;
      pool.in_channels = pool.out_channels = cin;
      pool.in_h = cur_h_;
      pool.in_w = cur_w_;
      pool.kernel = pool.stride = stride;
      pool.out_h = sh = cur_h_ / stride;
      pool.out_w = sw = cur_w_ / stride;
      add_layer(pool);
    }
    LayerInfo dc;
    dc.name = name + ".shortcut.conv";
    dc.kind = LayerKind::conv;
    dc.role = LayerRole::shortcut;
    dc.binarized = u.down_conv.binary;
    dc.in_channels = cin;
    dc.out_channels = cout;
    dc.in_h = dc.out_h = sh;
    dc.in_w = dc.out_w = sw;
    add_layer(dc);
    LayerInfo db = bn;
    db.name = name + ".shortcut.bn";
    db.role = LayerRole::shortcut;
    add_layer(db);
  }
  if (u.residual) {
    LayerInfo add = bn;
    add.name = name + ".add";
    add.kind = LayerKind::residual_add;
    add_layer(add);
  }
  if (act_kind_ != nn::ActivationKind::identity) {
    LayerInfo act = bn;
    act.name = name + ".act";
    act.kind = LayerKind::activation;
    add_layer(act);
  }
  cur_c_ = cout;
  cur_h_ = oh;
  cur_w_ = ow;
  if (u.tap_after) taps_.taps.push_back({name, cur_c_, cur_h_, cur_w_});
  if (u.pool_after) {
    LayerInfo pool = bn;
    pool.name = name + ".pool";
    pool.kind = LayerKind::max_pool;
    pool.kernel = pool.stride = 2;
    pool.out_h = oh / 2;
    pool.out_w = ow / 2;
    add_layer(pool);
    cur_h_ = pool.out_h;
    cur_w_ = pool.out_w;
  }
}

void Model::build_resnet(nn::Rng& rng, const std::vector<int>& widths, const std::vector<int>& blocks) {
  build_stem(rng, spec_.scaled(widths[0]));
  for (std::size_t s = 0; s < widths.size(); ++s) {
    const auto w = spec_.scaled(widths[s]);
    for (int b = 0; b < blocks[s]; ++b) {
      for (int half = 0; half < 2; ++half) {
        const int stride = s > 0 && b == 0 && half == 0 ? 2 : 1;
        auto u = make_unit(rng, cur_c_, w, stride, true);
        const bool stage_end = b == blocks[s] - 1 && half == 1;
        u.tap_after = stage_end && s + 1 < widths.size();
        const auto name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".unit" +
                          std::to_string(half);
        describe_unit(name, u, stride);
        units_.push_back(std::move(u));
      }
    }
  }
  global_pool_classifier_ = true;
  taps_.last = {"penultimate", cur_c_, cur_h_, cur_w_};
}

void Model::build_vgg(nn::Rng& rng) {
  const std::vector<int> widths{64, 128, 128, 256, 256};
  build_stem(rng, spec_.scaled(64));
  for (std::size_t i = 0; i < widths.size(); ++i) {
    const auto w = spec_.scaled(widths[i]);
    auto u = make_unit(rng, cur_c_, w, 1, false);
    u.pool_after = i % 2 == 0;
    u.tap_after = u.pool_after;
    if (u.pool_after && (cur_h_ % 2 != 0 || cur_w_ % 2 != 0)) {
      throw ConfigError("vgg_small pooling needs even spatial size, got " + std::to_string(cur_h_) + "x" +
                        std::to_string(cur_w_));
    }
    describe_unit("features.conv" + std::to_string(i + 2), u, 1);
    units_.push_back(std::move(u));
  }
  global_pool_classifier_ = false;
  taps_.last = {"penultimate", cur_c_, cur_h_, cur_w_};
}

ForwardResult Model::forward(const Tensor& batch, nn::RunMode mode) {
  if (batch.ndim() != 4 || batch.dim(1) != 3 || batch.dim(2) != spec_.input_h || batch.dim(3) != spec_.input_w) {
    throw DimensionError("model expects [N, 3, " + std::to_string(spec_.input_h) + ", " +
                         std::to_string(spec_.input_w) + "], got " + shape_str(batch.shape()));
  }
  counters::add("model.forward");
  ForwardResult res;
  auto x = stem_act_.forward(stem_bn_.forward(stem_conv_.forward(batch), mode));
  res.taps.push_back(x);
  if (imagenet_stem_) x = max_pool2d(x, 3, 2, 1);

  for (auto& u : units_) {
    auto y = u.bn.forward(u.conv.forward(x), mode);
    if (u.residual) {
      Tensor sc = x;
      if (u.downsample) {
        const int stride = static_cast<int>(x.dim(2) / y.dim(2));
        if (stride > 1) sc = avg_pool2d(sc, stride, stride);
        sc = u.down_bn.forward(u.down_conv.forward(sc), mode);
      }
      y = add(y, sc);
    }
    y = u.act.forward(y);
    if (u.tap_after) res.taps.push_back(y);
    if (u.pool_after) y = max_pool2d(y, 2, 2);
    x = y;
  }

  res.penultimate = head_.forward(res.taps, x, mode);
  auto features = global_pool_classifier_ ? global_avg_pool(res.penultimate) : flatten(res.penultimate);
  res.logits = classifier_.forward(features);
  return res;
}

nn::TensorList Model::named_tensors() {
  nn::TensorList out;
  stem_conv_.collect("stem.conv", out);
  stem_bn_.collect("stem.bn", out);
  stem_act_.collect("stem.act", out);
  for (std::size_t i = 0; i < units_.size(); ++i) {
    auto& u = units_[i];
    const auto p = "units." + std::to_string(i);
    u.conv.collect(p + ".conv", out);
    u.bn.collect(p + ".bn", out);
    u.act.collect(p + ".act", out);
    if (u.downsample) {
      u.down_conv.collect(p + ".shortcut.conv", out);
      u.down_bn.collect(p + ".shortcut.bn", out);
    }
  }
  head_.collect("head", out);
  classifier_.collect("classifier", out);
  return out;
}

void Model::after_update() {
  auto clip = [](ConvSlot& s) {
    if (!s.binary) return;
    for (auto& v : s.bconv.layer.weight.mutable_data()) v = std::clamp(v, -1.0f, 1.0f);
    s.bconv.layer.refresh_cache();
  };
  for (auto& u : units_) {
    clip(u.conv);
    if (u.downsample) clip(u.down_conv);
  }
}

void Model::refresh_caches() {
  for (auto& u : units_) {
    if (u.conv.binary) u.conv.bconv.layer.refresh_cache();
    if (u.downsample && u.down_conv.binary) u.down_conv.bconv.layer.refresh_cache();
  }
}

int Model::binary_conv_count() const {
  int n = 0;
  for (const auto& l : layers_) n += l.kind == LayerKind::conv && l.binarized ? 1 : 0;
  return n;
}

int Model::real_weight_layer_count(LayerRole role) const {
  int n = 0;
  for (const auto& l : layers_) {
    if (l.role != role || l.binarized) continue;
    n += l.kind == LayerKind::conv || l.kind == LayerKind::linear ? 1 : 0;
  }
  return n;
}

}  // namespace ir2net::model
