#include "ir2net/layer_info.hpp"

namespace ir2net {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv: return "conv";
    case LayerKind::linear: return "linear";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::activation: return "activation";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::adaptive_pool: return "adaptive_pool";
    case LayerKind::global_pool: return "global_pool";
    case LayerKind::residual_add: return "residual_add";
  }
  return "conv";
}

std::string to_string(LayerRole role) {
  switch (role) {
    case LayerRole::stem: return "stem";
    case LayerRole::body: return "body";
    case LayerRole::shortcut: return "shortcut";
    case LayerRole::head: return "head";
    case LayerRole::classifier: return "classifier";
  }
  return "body";
}

}  // namespace ir2net
