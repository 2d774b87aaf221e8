#include "ir2net/complexity.hpp"

#include <iomanip>
#include <numeric>
#include <sstream>

#include "ir2net/model.hpp"

namespace ir2net::complexity {

std::string Rational::str() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

Rational make_rational(std::int64_t num, std::int64_t den) {
  if (den <= 0) throw ConfigError("rational with non-positive denominator");
  const auto g = std::gcd(num, den);
  return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

Rational ops_total(std::int64_t bops, std::int64_t flops) {
  if (bops < 0 || flops < 0) throw ConfigError("ops_total: negative operation count");
  return make_rational(bops + 64 * flops, 64);
}

std::int64_t layer_macs(const LayerInfo& l) {
  if (l.kind == LayerKind::linear) return l.in_channels * l.out_channels;
  if (l.kind != LayerKind::conv) return 0;
  return l.out_channels * (l.in_channels / l.groups) * l.kernel * l.kernel * l.out_h * l.out_w;
}

namespace {

std::int64_t adaptive_axis_coverage(std::int64_t in, std::int64_t out) {
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < out; ++i) {
    const auto begin = i * in / out;
    const auto end = ((i + 1) * in + out - 1) / out;
    total += end - begin;
  }
  return total;
}

}  // namespace

std::int64_t pool_coverage(const LayerInfo& l) {
  switch (l.kind) {
    case LayerKind::max_pool:
    case LayerKind::avg_pool:
      return l.out_elements() * l.kernel * l.kernel;
    case LayerKind::adaptive_pool:
      return l.in_channels * adaptive_axis_coverage(l.in_h, l.out_h) * adaptive_axis_coverage(l.in_w, l.out_w);
    case LayerKind::global_pool:
      return l.in_elements();
    default:
      return 0;
  }
}

LayerCost cost_of(const LayerInfo& l, const CountingConventions& c) {
  LayerCost cost{l.name, l.kind, l.role, l.binarized, layer_macs(l), 0, 0};
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::linear:
      if (l.binarized) {
        cost.bops = cost.macs * c.bops_per_binary_mac;
      } else {
        cost.flops = cost.macs * c.flops_per_mac;
      }
      break;
    case LayerKind::batchnorm: cost.flops = l.out_elements() * c.bn_flops_per_element; break;
    case LayerKind::activation: cost.flops = l.out_elements() * c.activation_flops_per_element; break;
    case LayerKind::residual_add: cost.flops = l.out_elements() * c.residual_add_flops_per_element; break;
    case LayerKind::max_pool:
    case LayerKind::avg_pool:
    case LayerKind::adaptive_pool:
    case LayerKind::global_pool: cost.flops = pool_coverage(l) * c.pool_flops_per_covered_element; break;
  }
  return cost;
}

ComplexityReport count_layers(const LayerList& layers, const CountingConventions& conv) {
  ComplexityReport r;
  for (const auto& l : layers) {
    r.per_layer.push_back(cost_of(l, conv));
    r.total_bops += r.per_layer.back().bops;
    r.total_flops += r.per_layer.back().flops;
  }
  r.total_ops = ops_total(r.total_bops, r.total_flops);
  r.q_scale = q_scale(layers);
  return r;
}

ComplexityReport count_model(const model::Model& m, const CountingConventions& conv) {
  auto r = count_layers(m.layers(), conv);
  const auto& spec = m.spec();
  if (recover::effective_mode(spec.recovery) != recover::RecoveryMode::none) {
    const auto& t = m.tap_set();
    r.q_cirec = q_cirec(spec.recovery, t.concat_channels(), t.last.channels, t.last.height, t.last.width);
  }
  return r;
}

std::int64_t q_scale(const LayerList& layers) {
  std::int64_t q = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv && l.role == LayerRole::body) q += l.out_elements();
  }
  return q;
}

std::int64_t q_scale(const model::Model& m) { return q_scale(m.layers()); }

std::int64_t q_cirec(const recover::RecoveryConfig& cfg, std::int64_t c_in, std::int64_t c_n, std::int64_t h_n,
                     std::int64_t w_n) {
  const auto hw = h_n * w_n;
  if (cfg.r == 1 || cfg.mode == recover::RecoveryMode::irec) return c_n * c_in * hw;
  const auto w = recover::resolve_cirec(cfg, c_n);
  return w.reduced * c_in * hw + w.spatial * (w.reduced / w.groups) * hw * 9;
}

std::string format_text(const ComplexityReport& r) {
  std::ostringstream os;
  os << std::left << std::setw(40) << "layer" << std::setw(14) << "kind" << std::right << std::setw(16) << "BOPs"
     << std::setw(16) << "FLOPs" << "\n";
  for (const auto& l : r.per_layer) {
    os << std::left << std::setw(40) << l.name << std::setw(14) << (to_string(l.kind) + (l.binarized ? "*" : ""))
       << std::right << std::setw(16) << l.bops << std::setw(16) << l.flops << "\n";
  }
  os << "\n";
  os << "total BOPs   " << r.total_bops << "\n";
  os << "total FLOPs  " << r.total_flops << "\n";
  os << "OPs          " << r.total_ops.str() << " (" << std::scientific << std::setprecision(4) << r.total_ops.value()
     << ")\n";
  os << "q_scale      " << r.q_scale << "\n";
  if (r.q_cirec) os << "q_cirec      " << *r.q_cirec << "\n";
  os << "(* binarized)\n";
  return os.str();
}

std::string format_csv(const ComplexityReport& r) {
  std::ostringstream os;
  os << "layer,kind,binarized,BOPs,FLOPs\n";
  for (const auto& l : r.per_layer) {
    os << l.name << "," << to_string(l.kind) << "," << (l.binarized ? 1 : 0) << "," << l.bops << "," << l.flops
       << "\n";
  }
  os << "total,,," << r.total_bops << "," << r.total_flops << "\n";
  os << "ops,,,," << r.total_ops.str() << "\n";
  os << "q_scale,,,," << r.q_scale << "\n";
  if (r.q_cirec) os << "q_cirec,,,," << *r.q_cirec << "\n";
  return os.str();
}

}  // namespace ir2net::complexity
