#include "ir2net/recover.hpp"

#include <charconv>

namespace ir2net::recover {

std::string to_string(RecoveryMode mode) {
  switch (mode) {
    case RecoveryMode::none: return "none";
    case RecoveryMode::irec: return "irec";
    case RecoveryMode::cirec: return "cirec";
  }
  return "none";
}

RecoveryMode parse_mode(const std::string& name) {
  if (name == "none") return RecoveryMode::none;
  if (name == "irec") return RecoveryMode::irec;
  if (name == "cirec") return RecoveryMode::cirec;
  throw ConfigError("unknown recovery mode '" + name + "' (none, irec, cirec)");
}

std::string to_string(WidthRounding rounding) { return rounding == WidthRounding::strict ? "strict" : "floor"; }

WidthRounding parse_rounding(const std::string& name) {
  if (name == "strict") return WidthRounding::strict;
  if (name == "floor") return WidthRounding::floor;
  throw ConfigError("unknown width rounding '" + name + "' (strict, floor)");
}

std::string RecoveryConfig::groups_str() const { return groups_from_input ? "CI" : std::to_string(g); }

void RecoveryConfig::set_groups(const std::string& value) {
  if (value == "CI" || value == "ci") {
    groups_from_input = true;
    return;
  }
  int parsed = 0;
  auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), parsed);
  if (ec != std::errc{} || end != value.data() + value.size() || parsed < 1) {
    throw ConfigError("recovery groups must be a positive integer or CI, got '" + value + "'");
  }
  groups_from_input = false;
  g = parsed;
}

std::int64_t TapSet::concat_channels() const {
  std::int64_t c = last.channels;
  for (const auto& t : taps) c += t.channels;
  return c;
}

CIRecWidths resolve_cirec(const RecoveryConfig& cfg, std::int64_t c_n) {
  if (cfg.r < 1) throw ConfigError("recovery r must be >= 1, got " + std::to_string(cfg.r));
  if (!cfg.groups_from_input && cfg.g < 1) throw ConfigError("recovery g must be >= 1");
  if (cfg.rounding == WidthRounding::strict && c_n % cfg.r != 0) {
    throw ConfigError("cirec: r = " + std::to_string(cfg.r) + " does not divide C_n = " + std::to_string(c_n));
  }
  CIRecWidths w;
  w.reduced = c_n / cfg.r;
  if (w.reduced < 1) {
    throw ConfigError("cirec: r = " + std::to_string(cfg.r) + " leaves no channels of C_n = " + std::to_string(c_n));
  }
  w.spatial = c_n - w.reduced;
  w.groups = cfg.groups_from_input ? static_cast<int>(w.reduced) : cfg.g;
  if (cfg.r == 1) return w;
  if (w.reduced % w.groups != 0) {
    throw ConfigError("cirec: g = " + std::to_string(w.groups) + " does not divide the group conv input width " +
                      std::to_string(w.reduced));
  }
  if (w.spatial < w.groups) {
    throw ConfigError("cirec: group conv output width " + std::to_string(w.spatial) + " is smaller than g = " +
                      std::to_string(w.groups));
  }
  if (cfg.rounding == WidthRounding::strict && w.spatial % w.groups != 0) {
    throw ConfigError("cirec: g = " + std::to_string(w.groups) + " does not divide the group conv output width " +
                      std::to_string(w.spatial));
  }
  return w;
}

RecoveryMode effective_mode(const RecoveryConfig& cfg) {
  if (cfg.mode == RecoveryMode::cirec && cfg.r == 1) return RecoveryMode::irec;
  return cfg.mode;
}

std::vector<Tensor> align_taps(const TapSet& taps, std::span<const Tensor> features) {
  if (features.size() != taps.taps.size()) {
    throw DimensionError("align_taps: " + std::to_string(features.size()) + " features for " +
                         std::to_string(taps.taps.size()) + " taps");
  }
  std::vector<Tensor> out;
  out.reserve(features.size());
  for (const auto& f : features) {
    if (f.ndim() != 4) throw DimensionError("align_taps: tap must be [N, C, H, W], got " + shape_str(f.shape()));
    if (f.dim(2) < taps.last.height || f.dim(3) < taps.last.width) {
      throw ConfigError("align_taps: tap " + shape_str(f.shape()) + " is smaller than the penultimate " +
                        std::to_string(taps.last.height) + "x" + std::to_string(taps.last.width));
    }
    if (f.dim(2) == taps.last.height && f.dim(3) == taps.last.width) {
      out.push_back(f);
    } else {
      out.push_back(adaptive_avg_pool2d(f, taps.last.height, taps.last.width));
    }
  }
  return out;
}

Tensor concat_features(std::span<const Tensor> aligned, const Tensor& f_last) {
  if (aligned.empty()) return f_last;
  std::vector<Tensor> parts(aligned.begin(), aligned.end());
  parts.push_back(f_last);
  for (const auto& p : parts) {
    if (p.ndim() != 4 || p.dim(0) != f_last.dim(0) || p.dim(2) != f_last.dim(2) || p.dim(3) != f_last.dim(3)) {
      throw DimensionError("concat_features: " + shape_str(p.shape()) + " does not match " + shape_str(f_last.shape()));
    }
  }
  return concat_channels<float>(parts);
}

void ConvBnAct::collect(const std::string& prefix, nn::TensorList& out) {
  conv.collect(prefix + ".conv", out);
  bn.collect(prefix + ".bn", out);
  act.collect(prefix + ".act", out);
}

Tensor irec_fuse(const Tensor& f_cat, IRecParams& params, nn::RunMode mode) { return params.fuse.forward(f_cat, mode); }

Tensor cirec_fuse(const Tensor& f_cat, CIRecParams& params, nn::RunMode mode) {
  auto channel = params.channel.forward(f_cat, mode);
  auto spatial = params.spatial.forward(channel, mode);
  const std::vector<Tensor> parts{channel, spatial};
  return concat_channels<float>(parts);
}

namespace {

ConvBnAct make_unit(std::int64_t cin, std::int64_t cout, int kernel, int groups, nn::ActivationKind act,
                    nn::Rng& rng) {
  ConvBnAct u;
  u.conv = nn::Conv2d(cin, cout, kernel, {1, kernel / 2, groups}, rng);
  u.bn = nn::BatchNorm2d(cout);
  u.act = nn::Activation(act, cout);
  return u;
}

void describe_unit(LayerList& out, const std::string& name, const ConvBnAct& u, std::int64_t h, std::int64_t w,
                   nn::ActivationKind act) {
  LayerInfo conv;
  conv.name = name + ".conv";
  conv.kind = LayerKind::conv;
  conv.role = LayerRole::head;
  conv.in_channels = u.conv.in_channels();
  conv.out_channels = u.conv.out_channels();
  conv.kernel = u.conv.kernel();
  conv.groups = u.conv.params.groups;
  conv.in_h = conv.out_h = h;
  conv.in_w = conv.out_w = w;
  out.push_back(conv);

  LayerInfo bn = conv;
  bn.name = name + ".bn";
  bn.kind = LayerKind::batchnorm;
  bn.in_channels = bn.out_channels;
  bn.kernel = 1;
  bn.groups = 1;
  out.push_back(bn);

  if (act != nn::ActivationKind::identity) {
    LayerInfo a = bn;
    a.name = name + ".act";
    a.kind = LayerKind::activation;
    out.push_back(a);
  }
}

}  // namespace

RecoveryHead::RecoveryHead(const RecoveryConfig& cfg, const TapSet& taps, nn::ActivationKind activation,
                           nn::Rng& rng)
    : mode_(effective_mode(cfg)), taps_(taps), activation_(activation) {
  const auto c_n = taps.last.channels;
  const auto c_cat = taps.concat_channels();
  for (const auto& t : taps.taps) {
    if (t.height < taps.last.height || t.width < taps.last.width) {
      throw ConfigError("recovery tap " + t.layer + " is smaller than the penultimate map");
    }
  }
  if (mode_ == RecoveryMode::irec) {
    if (cfg.r < 1) throw ConfigError("recovery r must be >= 1, got " + std::to_string(cfg.r));
    irec.fuse = make_unit(c_cat, c_n, 1, 1, activation, rng);
  } else if (mode_ == RecoveryMode::cirec) {
    const auto w = resolve_cirec(cfg, c_n);
    if (w.reduced + w.spatial != c_n) throw ContractError("cirec channel plan does not conserve C_n");
    cirec.channel = make_unit(c_cat, w.reduced, 1, 1, activation, rng);
    cirec.spatial = make_unit(w.reduced, w.spatial, 3, w.groups, activation, rng);
  }
}

Tensor RecoveryHead::forward(std::span<const Tensor> features, const Tensor& f_last, nn::RunMode mode) {
  if (mode_ == RecoveryMode::none) return f_last;
  auto aligned = align_taps(taps_, features);
  auto f_cat = concat_features(aligned, f_last);
  return mode_ == RecoveryMode::irec ? irec_fuse(f_cat, irec, mode) : cirec_fuse(f_cat, cirec, mode);
}

void RecoveryHead::collect(const std::string& prefix, nn::TensorList& out) {
  if (mode_ == RecoveryMode::irec) {
    irec.fuse.collect(prefix + ".fuse", out);
  } else if (mode_ == RecoveryMode::cirec) {
    cirec.channel.collect(prefix + ".channel", out);
    cirec.spatial.collect(prefix + ".spatial", out);
  }
}

LayerList RecoveryHead::describe(const std::string& prefix) const {
  LayerList out;
  if (mode_ == RecoveryMode::none) return out;
  const auto h = taps_.last.height, w = taps_.last.width;
  for (std::size_t i = 0; i < taps_.taps.size(); ++i) {
    const auto& t = taps_.taps[i];
    if (t.height == h && t.width == w) continue;
    LayerInfo pool;
    pool.name = prefix + ".align" + std::to_string(i);
    pool.kind = LayerKind::adaptive_pool;
    pool.role = LayerRole::head;
    pool.in_channels = pool.out_channels = t.channels;
    pool.in_h = t.height;
    pool.in_w = t.width;
    pool.out_h = h;
    pool.out_w = w;
    out.push_back(pool);
  }
  if (mode_ == RecoveryMode::irec) {
    describe_unit(out, prefix + ".fuse", irec.fuse, h, w, activation_);
  } else {
    describe_unit(out, prefix + ".channel", cirec.channel, h, w, activation_);
    describe_unit(out, prefix + ".spatial", cirec.spatial, h, w, activation_);
  }
  return out;
}

}  // namespace ir2net::recover
