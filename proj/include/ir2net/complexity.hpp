#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ir2net/layer_info.hpp"
#include "ir2net/recover.hpp"

namespace ir2net::model {
class Model;
}

// Static BOPs / FLOPs / OPs accounting. OPs = BOPs / 64 + FLOPs, kept exact.

namespace ir2net::complexity {

/// Every counting rule in one place. Defaults charge one FLOP per real MAC
/// and per BN / activation element; see README for how they were chosen.
struct CountingConventions {
  std::int64_t flops_per_mac = 1;
  std::int64_t bops_per_binary_mac = 1;
  std::int64_t bn_flops_per_element = 1;
  std::int64_t activation_flops_per_element = 1;
  /// Charged per input element covered by a pooling window.
  std::int64_t pool_flops_per_covered_element = 1;
  std::int64_t residual_add_flops_per_element = 0;
};

/// Exact non-negative rational num / den in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const;
  friend bool operator==(const Rational&, const Rational&) = default;
};

Rational make_rational(std::int64_t num, std::int64_t den);

/// bops / 64 + flops.
Rational ops_total(std::int64_t bops, std::int64_t flops);

struct LayerCost {
  std::string name;
  LayerKind kind = LayerKind::conv;
  LayerRole role = LayerRole::body;
  bool binarized = false;
  std::int64_t macs = 0;
  std::int64_t bops = 0;
  std::int64_t flops = 0;
};

struct ComplexityReport {
  std::vector<LayerCost> per_layer;
  std::int64_t total_bops = 0;
  std::int64_t total_flops = 0;
  Rational total_ops;
  std::int64_t q_scale = 0;
  std::optional<std::int64_t> q_cirec;  // present when the model has a recovery head
};

/// Multiply-accumulates of a conv or linear layer: Cout * Cin/g * K^2 * H' * W'.
std::int64_t layer_macs(const LayerInfo& layer);

/// Input elements covered by the windows of a pooling layer, summed.
std::int64_t pool_coverage(const LayerInfo& layer);

LayerCost cost_of(const LayerInfo& layer, const CountingConventions& conv);

ComplexityReport count_layers(const LayerList& layers, const CountingConventions& conv = {});
ComplexityReport count_model(const model::Model& model, const CountingConventions& conv = {});

/// Sum of C * H * W over interior conv outputs (body convs between the first
/// and last real layers).
std::int64_t q_scale(const LayerList& layers);
std::int64_t q_scale(const model::Model& model);

/// Cost of the recovery head's two convolutions (or one at r = 1):
/// reduced * C_in * H * W + spatial * (reduced / g) * H * W * 9.
std::int64_t q_cirec(const recover::RecoveryConfig& cfg, std::int64_t c_in, std::int64_t c_n, std::int64_t h_n,
                     std::int64_t w_n);

/// Plain-text table: layer, kind, BOPs, FLOPs, then totals.
std::string format_text(const ComplexityReport& report);
/// CSV with the same columns; totals follow as comment-free summary rows.
std::string format_csv(const ComplexityReport& report);

}  // namespace ir2net::complexity
