#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ir2net/complexity.hpp"
#include "ir2net/config.hpp"
#include "ir2net/data.hpp"
#include "ir2net/model.hpp"

namespace ir2net::harness {

/// Raised when a training step produces a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StepInfo {
  int epoch = 0;  // 1-based
  std::int64_t step = 0;  // 1-based, global
  double loss_total = 0;
  double loss_original = 0;
  double keep_fraction = 1;
  double lr = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  /// Negative when the epoch was not evaluated.
  double test_accuracy = -1;
  double keep_fraction_mean = 1;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<StepInfo> steps;
  std::string metrics_path;
  std::string final_checkpoint;
  double final_accuracy = 0;
};

struct TrainHooks {
  std::function<void(const StepInfo&)> on_step;
};

/// Train and test splits selected by the config (file-backed or synthetic,
/// then seeded subsets).
Cifar10 load_data(const TrainConfig& cfg);

/// Runs the configured experiment, writing metrics.csv and checkpoints under
/// cfg.output_dir.
TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks = {});
/// Same, on already-loaded data.
TrainResult train(const TrainConfig& cfg, const Cifar10& data, const TrainHooks& hooks = {});

struct EvalResult {
  std::int64_t correct = 0;
  std::int64_t total = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Eval-mode top-1 accuracy. Throws ConfigError when a label is outside the
/// model's classes.
EvalResult evaluate(model::Model& model, const Dataset& data, const Normalization& norm, int batch_size = 200);

/// Loads the checkpoint and scores the test split found at `data_path`
/// (a CIFAR-format directory or a single batch file).
EvalResult evaluate_checkpoint(const std::string& checkpoint, const std::string& data_path);

struct ExportedFiles {
  std::vector<std::string> paths;
};

/// For every image: attention map (PGM), mask at `lambda` (PGM) and masked
/// image (PPM). `images` is a directory of 32x32 PPM files or CIFAR batch files.
ExportedFiles export_attention(const std::string& checkpoint, const std::string& images, double lambda,
                               const std::string& out_dir);

/// Builds the configured model and writes complexity.txt / complexity.csv.
complexity::ComplexityReport report_complexity(const TrainConfig& cfg, const std::string& out_dir);

// Netpbm helpers.
void write_pgm(const std::string& path, std::int64_t width, std::int64_t height, const std::vector<std::uint8_t>& px);
void write_ppm(const std::string& path, std::int64_t width, std::int64_t height, const std::vector<std::uint8_t>& rgb);
/// Reads a binary PPM (P6) or PGM (P5, replicated to RGB), maxval 255.
std::vector<std::uint8_t> read_pnm_rgb(const std::string& path, std::int64_t& width, std::int64_t& height);

/// Min-max scales to 0..255; a constant map becomes all zeros.
std::vector<std::uint8_t> to_gray8(std::span<const float> values);

}  // namespace ir2net::harness
