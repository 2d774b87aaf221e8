#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "ir2net/ires.hpp"
#include "ir2net/model.hpp"

// Flat key = value run configuration. Lines starting with '#' are comments.
// serialize() emits every key in a fixed order, so a parsed-and-reserialized
// file is canonical.

namespace ir2net::harness {

enum class OptimizerKind { sgd, adam };
enum class ScheduleKind { cosine, step, constant };
enum class DataFormat { cifar10, synthetic };

struct TrainConfig {
  model::BackboneSpec backbone;
  ires::IResConfig ires{0.15, 0.5, false};

  OptimizerKind optimizer = OptimizerKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9, beta2 = 0.999, adam_epsilon = 1e-8;
  double weight_decay = 0.0;

  ScheduleKind schedule = ScheduleKind::cosine;
  int step_size = 30;
  double step_gamma = 0.1;

  int epochs = 30;
  int batch_size = 64;
  /// Stop after this many optimizer steps in total; 0 = no limit.
  int max_steps = 0;
  /// Evaluate every k epochs (and always after the last); 0 = last epoch only.
  int eval_every = 1;
  int checkpoint_every = 1;
  std::uint64_t seed = 1;

  DataFormat data_format = DataFormat::cifar10;
  std::string data_dir;
  int train_subset = 0;  // 0 = everything
  int test_subset = 0;
  bool augment = true;
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> std{0.2470, 0.2435, 0.2616};
  /// Sizes of the in-memory synthetic set when data_format = synthetic.
  int synthetic_train = 1000;
  int synthetic_test = 200;

  std::string output_dir = "runs/default";

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

TrainConfig parse_config(const std::string& text);
TrainConfig load_config(const std::string& path);
std::string serialize(const TrainConfig& cfg);

std::string to_string(OptimizerKind kind);
std::string to_string(ScheduleKind kind);
std::string to_string(DataFormat format);

}  // namespace ir2net::harness
