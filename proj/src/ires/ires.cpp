#include "ir2net/ires.hpp"

#include "ir2net/counters.hpp"
#include "ir2net/model.hpp"
#include "ir2net/ops.hpp"

namespace ir2net::ires {

void IResConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("ires lambda must lie in [0, 1]");
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("ires mu must lie in [0, 1]");
}

Tensor attention_map(const Tensor& a_l) {
  if (a_l.ndim() != 4) throw DimensionError("attention_map expects [N, C, h, w], got " + shape_str(a_l.shape()));
  counters::add("ires.attention");
  const auto n = a_l.dim(0), c = a_l.dim(1), hw = a_l.dim(2) * a_l.dim(3);
  auto out = Tensor::zeros({n, a_l.dim(2), a_l.dim(3)});
  auto src = a_l.data();
  auto dst = out.mutable_data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < hw; ++i) {
      double acc = 0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double v = src[static_cast<std::size_t>((b * c + ch) * hw + i)];
        acc += v * v;
      }
      dst[static_cast<std::size_t>(b * hw + i)] = static_cast<float>(acc);
    }
  return out;
}

Tensor upsample_attention(const Tensor& f_a, std::int64_t target_h, std::int64_t target_w) {
  if (f_a.ndim() != 3) throw DimensionError("attention map expects [N, h, w], got " + shape_str(f_a.shape()));
  NoGradScope<float> detached;
  auto as4 = reshape(f_a.detach(), {f_a.dim(0), 1, f_a.dim(1), f_a.dim(2)});
  return reshape(upsample_bilinear(as4, target_h, target_w), {f_a.dim(0), target_h, target_w});
}

std::vector<AttentionMask> make_mask(const Tensor& f_a, std::int64_t target_h, std::int64_t target_w,
                                     double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("make_mask: lambda must lie in [0, 1]");
  counters::add("ires.mask");
  auto up = upsample_attention(f_a, target_h, target_w);
  const auto n = up.dim(0), hw = target_h * target_w;
  std::vector<AttentionMask> masks(static_cast<std::size_t>(n));
  auto v = up.data();
  for (std::int64_t b = 0; b < n; ++b) {
    auto& m = masks[static_cast<std::size_t>(b)];
    m.height = target_h;
    m.width = target_w;
    m.lambda = lambda;
    double mean = 0;
    for (std::int64_t i = 0; i < hw; ++i) mean += v[static_cast<std::size_t>(b * hw + i)];
    mean /= static_cast<double>(hw);
    m.tau = lambda * mean;
    m.values.resize(static_cast<std::size_t>(hw));
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < hw; ++i) {
      const bool keep = static_cast<double>(v[static_cast<std::size_t>(b * hw + i)]) >= m.tau;
      m.values[static_cast<std::size_t>(i)] = keep ? 1 : 0;
      kept += keep ? 1 : 0;
    }
    m.keep_fraction = static_cast<double>(kept) / static_cast<double>(hw);
  }
  return masks;
}

MaskedBatch apply_mask(const Tensor& batch, std::span<const AttentionMask> masks) {
  if (batch.ndim() != 4) throw DimensionError("apply_mask expects [N, C, H, W], got " + shape_str(batch.shape()));
  const auto n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  if (static_cast<std::int64_t>(masks.size()) != n) {
    throw DimensionError("apply_mask: " + std::to_string(masks.size()) + " masks for batch of " + std::to_string(n));
  }
  MaskedBatch out;
  out.images = batch.detach();
  auto dst = out.images.mutable_data();
  for (std::int64_t b = 0; b < n; ++b) {
    const auto& m = masks[static_cast<std::size_t>(b)];
    if (m.height != h || m.width != w) {
      throw DimensionError("apply_mask: mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                           " vs image " + std::to_string(h) + "x" + std::to_string(w));
    }
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < h * w; ++i) {
        if (m.values[static_cast<std::size_t>(i)] == 0) dst[static_cast<std::size_t>((b * c + ch) * h * w + i)] = 0.0f;
      }
  }
  out.masks.assign(masks.begin(), masks.end());
  return out;
}

Tensor combined_loss(const Tensor& loss_original, const Tensor& loss_masked, double mu) {
  if (!(mu >= 0.0 && mu <= 1.0)) throw ConfigError("combined_loss: mu must lie in [0, 1]");
  return add(scale(loss_original, static_cast<float>(mu)), scale(loss_masked, static_cast<float>(1.0 - mu)));
}

StepResult ires_step(model::Model& model, const Tensor& batch, std::span<const int> targets, const IResConfig& cfg) {
  cfg.validate();
  StepResult res;
  auto first = model.forward(batch, nn::train_mode());
  res.loss_original = cross_entropy(first.logits, targets);
  res.stats.forwards = 1;
  if (!cfg.enabled) {
    res.loss_total = res.loss_original;
    return res;
  }

  counters::add("ires.step");
  std::vector<AttentionMask> masks;
  {
    NoGradScope<float> detached;
    masks = make_mask(attention_map(first.penultimate.detach()), batch.dim(2), batch.dim(3), cfg.lambda);
  }
  for (const auto& m : masks) {
    for (auto v : m.values) {
      if (v > 1) throw ContractError("attention mask entry outside {0, 1}");
    }
  }
  auto masked = apply_mask(batch, masks);
  counters::add("ires.masked_forward");
  auto second = model.forward(masked.images, nn::RunMode{true, false});
  res.loss_masked = cross_entropy(second.logits, targets);
  res.stats.forwards = 2;
  res.loss_total = combined_loss(res.loss_original, res.loss_masked, cfg.mu);

  double keep = 0, tau = 0;
  for (const auto& m : masks) {
    keep += m.keep_fraction;
    tau += m.tau;
  }
  res.stats.keep_fraction_mean = keep / static_cast<double>(masks.size());
  res.stats.tau_mean = tau / static_cast<double>(masks.size());
  return res;
}

}  // namespace ir2net::ires
