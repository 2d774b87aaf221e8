#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "ir2net/complexity.hpp"
#include "ir2net/config.hpp"
#include "ir2net/data.hpp"
#include "ir2net/errors.hpp"
#include "ir2net/train.hpp"

using namespace ir2net;

int main(int argc, char** argv) {
  CLI::App app{"Binary network training, evaluation and complexity tools"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_path, images_path, out_dir;
  double lambda = 0.15;
  int synth_train = 1000, synth_test = 200, synth_classes = 10;
  std::uint64_t synth_seed = 1;

  auto* train = app.add_subcommand("train", "Train from a config file");
  train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint on a test split");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data_path, "CIFAR-10 directory or batch file")->required();

  auto* flops = app.add_subcommand("flops", "BOPs / FLOPs / OPs report for a config");
  flops->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
  flops->add_option("--out", out_dir, "Also write complexity.txt and complexity.csv here");

  auto* exp = app.add_subcommand("export-attention", "Write attention maps, masks and masked images");
  exp->add_option("--ckpt", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  exp->add_option("--images", images_path, "Directory of 32x32 PPM/PGM files or CIFAR batch files")->required();
  exp->add_option("--lambda", lambda, "Mask threshold factor")->check(CLI::Range(0.0, 1.0));
  exp->add_option("--out", out_dir, "Output directory")->default_val("attention");

  auto* synth = app.add_subcommand("make-synthetic", "Write a synthetic dataset in CIFAR-10 binary layout");
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--train", synth_train, "Training records")->default_val(1000);
  synth->add_option("--test", synth_test, "Test records")->default_val(200);
  synth->add_option("--classes", synth_classes, "Number of classes")->default_val(10);
  synth->add_option("--seed", synth_seed, "Generator seed")->default_val(1);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = harness::load_config(config_path);
      harness::TrainHooks hooks;
      hooks.on_step = [](const harness::StepInfo& s) {
        if (s.step % 50 == 0) {
          std::printf("epoch %d step %lld loss %.5f keep %.3f lr %.3g\n", s.epoch, static_cast<long long>(s.step),
                      s.loss_total, s.keep_fraction, s.lr);
          std::fflush(stdout);
        }
      };
      auto res = harness::train(cfg, hooks);
      for (const auto& e : res.epochs) {
        std::printf("epoch %d train_loss %.5f", e.epoch, e.train_loss);
        if (e.test_accuracy >= 0) std::printf(" test_accuracy %.4f", e.test_accuracy);
        std::printf("\n");
      }
      std::printf("metrics %s\ncheckpoint %s\n", res.metrics_path.c_str(), res.final_checkpoint.c_str());
    } else if (*eval) {
      auto r = harness::evaluate_checkpoint(ckpt_path, data_path);
      std::printf("correct %lld / %lld  accuracy %.6f\n", static_cast<long long>(r.correct),
                  static_cast<long long>(r.total), r.accuracy());
    } else if (*flops) {
      auto cfg = harness::load_config(config_path);
      auto report = out_dir.empty() ? complexity::count_model(model::Model(cfg.backbone, cfg.seed))
                                    : harness::report_complexity(cfg, out_dir);
      std::cout << complexity::format_text(report);
    } else if (*exp) {
      auto files = harness::export_attention(ckpt_path, images_path, lambda, out_dir);
      for (const auto& p : files.paths) std::printf("%s\n", p.c_str());
    } else if (*synth) {
      harness::write_synthetic_cifar(out_dir, synth_train, synth_test, synth_classes, synth_seed);
      std::printf("wrote %s\n", out_dir.c_str());
    }
  } catch (const harness::DivergenceError& e) {
    std::fprintf(stderr, "diverged: %s", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
