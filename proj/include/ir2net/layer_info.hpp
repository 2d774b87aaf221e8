#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Static description of every costed layer in a built model. Filled in by the
// builders from known shapes, consumed by the complexity accountant.

namespace ir2net {

enum class LayerKind { conv, linear, batchnorm, activation, max_pool, avg_pool, adaptive_pool, global_pool, residual_add };

enum class LayerRole { stem, body, shortcut, head, classifier };

std::string to_string(LayerKind kind);
std::string to_string(LayerRole role);

struct LayerInfo {
  std::string name;
  LayerKind kind = LayerKind::conv;
  LayerRole role = LayerRole::body;
  bool binarized = false;

  std::int64_t in_channels = 0, out_channels = 0;
  std::int64_t in_h = 1, in_w = 1, out_h = 1, out_w = 1;
  int kernel = 1;
  int stride = 1;
  int groups = 1;

  std::int64_t out_elements() const { return out_channels * out_h * out_w; }
  std::int64_t in_elements() const { return in_channels * in_h * in_w; }
};

using LayerList = std::vector<LayerInfo>;

}  // namespace ir2net
