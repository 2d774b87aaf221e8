// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance                 run every criterion
//   acceptance --only N        run criterion N alone
//   acceptance --no-training   report criterion 7 as deferred instead of running it
//
// Criterion 7 needs the CIFAR-10 binary files; point IR2NET_CIFAR10_DIR at the
// directory holding data_batch_*.bin and test_batch.bin. Without it the
// criterion reports SKIP, and `--only 7` exits with 77.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ir2net/binary.hpp"
#include "ir2net/checkpoint.hpp"
#include "ir2net/complexity.hpp"
#include "ir2net/counters.hpp"
#include "ir2net/ires.hpp"
#include "ir2net/model.hpp"
#include "ir2net/ops.hpp"
#include "ir2net/train.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace ir2net;
namespace fs = std::filesystem;

namespace {

enum class Status { pass, fail, skip };

struct Outcome {
  Status status = Status::fail;
  std::string detail;
};

// Details are built as "a; b; c; ".
std::string trim_list(std::string d) {
  while (!d.empty() && (d.back() == ' ' || d.back() == ';')) d.pop_back();
  return d;
}

Outcome pass(std::string d) { return {Status::pass, trim_list(std::move(d))}; }
Outcome fail(std::string d) { return {Status::fail, trim_list(std::move(d))}; }
Outcome skip(std::string d) { return {Status::skip, std::move(d)}; }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const char* cifar_dir() {
  const char* d = std::getenv("IR2NET_CIFAR10_DIR");
  return d && *d ? d : nullptr;
}

fs::path scratch(const std::string& tag) {
  auto p = fs::temp_directory_path() / ("ir2net_accept_" + tag + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor random_tensor(Shape s, std::mt19937_64& rng, float lo = -1.5f, float hi = 1.5f) {
  std::uniform_real_distribution<float> d(lo, hi);
  auto t = Tensor::zeros(std::move(s));
  for (auto& v : t.mutable_data()) v = d(rng);
  return t;
}

recover::RecoveryConfig cirec(int r, int g, recover::WidthRounding rounding = recover::WidthRounding::strict) {
  recover::RecoveryConfig c;
  c.mode = recover::RecoveryMode::cirec;
  c.r = r;
  if (g == 0) {
    c.set_groups("CI");
  } else {
    c.g = g;
  }
  c.rounding = rounding;
  return c;
}

// ---------------------------------------------------------------------------

Outcome kernel_exactness() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> batch(1, 3), chan(1, 150), spatial(1, 12), kern(1, 5), pad(0, 3), str(1, 3),
      outs(1, 6);
  int exact = 0;
  const int total = 1000;
  for (int trial = 0; trial < total; ++trial) {
    const int k = kern(rng);
    const int p = std::min(pad(rng), k);
    const int h = std::max(spatial(rng), k), w = std::max(spatial(rng), k);
    const int s = str(rng);
    auto x = random_tensor({batch(rng), chan(rng), h, w}, rng);
    auto wt = random_tensor({outs(rng), x.dim(1), k, k}, rng);
    auto y = binary::binary_conv2d(x, wt, {s, p, false});
    auto ref = testing_support::dense_sign_conv(x, wt, s, p);
    bool ok = static_cast<std::size_t>(y.numel()) == ref.size();
    for (std::size_t i = 0; ok && i < ref.size(); ++i) ok = y[i] == static_cast<float>(ref[i]);
    exact += ok ? 1 : 0;
  }
  auto d = std::to_string(exact) + "/" + std::to_string(total) + " random convolutions integer-exact";
  return exact == total ? pass(d) : fail(d);
}

Outcome gradient_suite() {
  using testing_support::gradcheck;
  using testing_support::random_wide;
  using testing_support::random_wide_avoiding;
  std::mt19937_64 rng(77);
  auto leaf = [](WideTensor t) {
    t.set_requires_grad(true);
    return t;
  };
  double worst = 0;
  int checks = 0;
  std::string worst_name;
  auto run = [&](const std::string& name, const testing_support::WideFn& f, const std::vector<WideTensor>& in) {
    const double e = gradcheck(f, in).worst();
    ++checks;
    if (!(e <= worst)) {
      worst = e;
      worst_name = name;
    }
  };

  auto a = leaf(random_wide({2, 3, 4}, rng)), b = leaf(random_wide({2, 3, 4}, rng));
  run("add", [](const auto& in) { return add(in[0], in[1]); }, {a, b});
  run("sub", [](const auto& in) { return sub(in[0], in[1]); }, {a, b});
  run("mul", [](const auto& in) { return mul(in[0], in[1]); }, {a, b});
  run("scale", [](const auto& in) { return scale(in[0], 1.7); }, {a});
  run("square", [](const auto& in) { return square(in[0]); }, {a});
  run("sum", [](const auto& in) { return sum(in[0]); }, {a});
  run("mean", [](const auto& in) { return mean(in[0]); }, {a});
  run("reshape", [](const auto& in) { return reshape(in[0], {6, 4}); }, {a});
  run("flatten", [](const auto& in) { return flatten(in[0]); }, {a});

  auto xa = leaf(random_wide_avoiding({2, 3, 4, 4}, rng, {-1.0, 0.0, 1.0}));
  auto slope = leaf(random_wide({3}, rng, 0.05, 0.5));
  run("relu", [](const auto& in) { return relu(in[0]); }, {xa});
  run("hardtanh", [](const auto& in) { return hardtanh(in[0]); }, {xa});
  run("prelu", [](const auto& in) { return prelu(in[0], in[1]); }, {xa, slope});

  auto x = leaf(random_wide({2, 4, 7, 7}, rng));
  auto w = leaf(random_wide({6, 4, 3, 3}, rng));
  auto wg = leaf(random_wide({5, 2, 3, 3}, rng));
  run("conv2d", [](const auto& in) { return conv2d(in[0], in[1], {2, 1, 1}); }, {x, w});
  run("conv2d grouped", [](const auto& in) { return conv2d(in[0], in[1], {1, 1, 2}); }, {x, wg});

  auto gamma = leaf(random_wide({4}, rng, 0.5, 1.5)), beta = leaf(random_wide({4}, rng));
  run(
      "batch_norm2d",
      [](const auto& in) {
        auto rm = WideTensor::zeros({4});
        auto rv = WideTensor::full({4}, 1.0);
        return batch_norm2d(in[0], in[1], in[2], rm, rv, BatchNormOptions{});
      },
      {x, gamma, beta});

  run("max_pool2d", [](const auto& in) { return max_pool2d(in[0], 3, 2, 1); }, {x});
  run("avg_pool2d", [](const auto& in) { return avg_pool2d(in[0], 2, 2); }, {x});
  run("adaptive_avg_pool2d", [](const auto& in) { return adaptive_avg_pool2d(in[0], 3, 2); }, {x});
  run("global_avg_pool", [](const auto& in) { return global_avg_pool(in[0]); }, {x});
  run("upsample_bilinear", [](const auto& in) { return upsample_bilinear(in[0], 11, 9); }, {x});
  run("slice_channels", [](const auto& in) { return slice_channels(in[0], 1, 2); }, {x});
  auto y = leaf(random_wide({2, 2, 7, 7}, rng));
  run(
      "concat_channels",
      [](const auto& in) {
        std::vector<WideTensor> parts{in[0], in[1]};
        return concat_channels<double>(parts);
      },
      {x, y});

  auto feat = leaf(random_wide({3, 5}, rng)), lw = leaf(random_wide({4, 5}, rng)), lb = leaf(random_wide({4}, rng));
  run("linear", [](const auto& in) { return linear(in[0], in[1], in[2]); }, {feat, lw, lb});
  const std::vector<int> targets{1, 0, 3};
  auto logits = leaf(random_wide({3, 4}, rng, -3, 3));
  run("cross_entropy", [&](const auto& in) { return cross_entropy(in[0], targets); }, {logits});

  // Composed graph.
  auto cx = leaf(random_wide({2, 3, 6, 6}, rng));
  auto cw = leaf(random_wide({4, 3, 3, 3}, rng));
  auto cg = leaf(random_wide({4}, rng, 0.5, 1.5)), cb = leaf(random_wide({4}, rng));
  auto fw = leaf(random_wide({5, 36}, rng)), fb = leaf(random_wide({5}, rng));
  const std::vector<int> ct{2, 4};
  run(
      "conv->bn->relu->linear->ce",
      [&](const auto& in) {
        auto rm = WideTensor::zeros({4});
        auto rv = WideTensor::full({4}, 1.0);
        auto h = relu(batch_norm2d(conv2d(in[0], in[1], {2, 1, 1}), in[2], in[3], rm, rv, BatchNormOptions{}));
        return cross_entropy(linear(flatten(h), in[4], in[5]), ct);
      },
      {cx, cw, cg, cb, fw, fb});

  auto d = std::to_string(checks) + " gradient checks, worst relative error " + fmt("%.2e", worst) + " (" +
           worst_name + "), bound 1e-4";
  return worst <= 1e-4 ? pass(d) : fail(d);
}

Outcome complexity_reproduction() {
  model::BackboneSpec base;
  base.arch = model::Architecture::resnet18;
  base.input_h = base.input_w = 224;
  base.num_classes = 1000;

  std::ostringstream d;
  bool ok = true;
  auto near = [&](const std::string& name, double got, double want, double tol) {
    const double rel = (got - want) / want;
    const bool hit = std::fabs(rel) <= tol;
    ok = ok && hit;
    d << name << " " << fmt("%.4g", got) << " (" << fmt("%+.2f", 100 * rel) << "%)" << (hit ? "" : " OUT") << "; ";
  };
  auto exact_identity = [&](const complexity::ComplexityReport& r) {
    const bool hit = r.total_ops.num * 64 == (r.total_bops + 64 * r.total_flops) * r.total_ops.den;
    ok = ok && hit;
  };

  auto bin = complexity::count_model(model::Model(base, 0));
  exact_identity(bin);
  near("BOPs", static_cast<double>(bin.total_bops), 1.68e9, 0.01);

  struct Row {
    const char* name;
    recover::RecoveryConfig cfg;
    double ops;
  };
  const Row rows[] = {{"A", cirec(1, 1), 1.96e8},
                      {"B", cirec(2, 0), 1.85e8},
                      {"C", cirec(4, 8), 1.81e8},
                      {"D", cirec(20, 0, recover::WidthRounding::floor), 1.74e8}};
  for (const auto& row : rows) {
    auto s = base;
    s.recovery = row.cfg;
    auto r = complexity::count_model(model::Model(s, 0));
    exact_identity(r);
    near(std::string("OPs-") + row.name, r.total_ops.value(), row.ops, 0.02);
  }
  auto fp_spec = base;
  fp_spec.binarize = false;
  auto fp = complexity::count_model(model::Model(fp_spec, 0));
  exact_identity(fp);
  near("FP FLOPs", static_cast<double>(fp.total_flops), 1.83e9, 0.02);
  d << "OPs = BOPs/64 + FLOPs exact: " << (ok ? "yes" : "see above");
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome q_constraint() {
  struct Case {
    const char* name;
    model::Architecture arch;
    recover::RecoveryConfig cfg;
  };
  const Case cases[] = {{"VGG-Small r=32 g=CI", model::Architecture::vgg_small, cirec(32, 0)},
                        {"ResNet-20 r=4 g=CI", model::Architecture::resnet20, cirec(4, 0)},
                        {"ResNet-18 r=20 g=CI", model::Architecture::resnet18,
                         cirec(20, 0, recover::WidthRounding::floor)}};
  std::ostringstream d;
  bool ok = true;
  for (const auto& c : cases) {
    model::BackboneSpec s;
    s.arch = c.arch;
    s.recovery = c.cfg;
    auto r = complexity::count_model(model::Model(s, 0));
    const bool hit = r.q_cirec.has_value() && *r.q_cirec <= r.q_scale;
    ok = ok && hit;
    d << c.name << ": " << (r.q_cirec ? *r.q_cirec : -1) << " <= " << r.q_scale << (hit ? "" : " VIOLATED") << "; ";
  }
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome ires_properties() {
  model::BackboneSpec spec;
  spec.width_den = 4;
  model::Model m(spec, 3);
  auto data = harness::make_synthetic(80, 10, 5);
  harness::Normalization norm;
  std::mt19937_64 rng(6);
  const double grid[] = {0.0, 0.15, 0.5, 0.75, 1.0};
  int batches = 0, non_binary = 0, non_monotone = 0, identity_breaks = 0;
  for (int start = 0; start < 80; start += 16) {
    std::vector<int> idx(16);
    for (int i = 0; i < 16; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    auto batch = harness::make_batch(data, idx, norm, {true, 4}, rng);
    Tensor f_a;
    {
      NoGradScope<float> off;
      f_a = ires::attention_map(m.forward(batch.images, nn::train_mode()).penultimate);
    }
    std::vector<double> keep;
    for (double lambda : grid) {
      auto masks = ires::make_mask(f_a, 32, 32, lambda);
      double k = 0;
      for (const auto& mk : masks) {
        for (auto v : mk.values) non_binary += v > 1 ? 1 : 0;
        k += mk.keep_fraction;
      }
      keep.push_back(k);
      if (lambda == 0.0) {
        auto same = ires::apply_mask(batch.images, masks).images;
        identity_breaks +=
            std::memcmp(same.data().data(), batch.images.data().data(), batch.images.data().size_bytes()) != 0;
      }
    }
    for (std::size_t i = 1; i < keep.size(); ++i) non_monotone += keep[i] > keep[i - 1] ? 1 : 0;
    ++batches;
  }

  // A full restricted training step also asserts binaryness internally.
  {
    std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
    auto batch = harness::make_batch(data, idx, norm, {}, rng);
    Tape<float> tape;
    TapeScope<float> scope(&tape);
    auto r = ires::ires_step(m, batch.images, batch.labels, ires::IResConfig{});
    backward(r.loss_total);
  }

  counters::reset();
  {
    NoGradScope<float> off;
    std::vector<int> idx{0, 1, 2, 3};
    auto batch = harness::make_batch(data, idx, norm, {}, rng);
    m.forward(batch.images, nn::eval_mode());
  }
  const auto eval_ires_ops = counters::sum_prefix("ires.");
  const auto eval_forwards = counters::get("model.forward");

  std::ostringstream d;
  d << batches << " batches x " << std::size(grid) << " lambdas: non-binary entries " << non_binary
    << ", monotonicity breaks " << non_monotone << ", lambda=0 identity breaks " << identity_breaks
    << "; eval forward ran " << eval_ires_ops << " restriction ops";
  const bool ok = non_binary == 0 && non_monotone == 0 && identity_breaks == 0 && eval_ires_ops == 0 &&
                  eval_forwards == 1;
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome overfit_sanity() {
  const bool real = cifar_dir() != nullptr;
  std::ostringstream d;
  d << (real ? "CIFAR-10 subset" : "synthetic 32x32 data (CIFAR-10 not available)") << "; ";
  bool ok = true;
  for (std::uint64_t seed : {1, 2, 3}) {
    harness::TrainConfig cfg;
    cfg.backbone.width_den = 4;
    cfg.ires = {0.15, 0.5, true};
    cfg.seed = seed;
    cfg.batch_size = 100;
    cfg.epochs = 200;
    cfg.max_steps = 200;
    cfg.eval_every = 0;
    cfg.checkpoint_every = 0;
    cfg.schedule = harness::ScheduleKind::constant;
    cfg.augment = false;
    cfg.output_dir = scratch("overfit").string();
    harness::Cifar10 data;
    if (real) {
      cfg.data_format = harness::DataFormat::cifar10;
      cfg.data_dir = cifar_dir();
      cfg.train_subset = 100;
      cfg.test_subset = 100;
      data = harness::load_data(cfg);
    } else {
      cfg.data_format = harness::DataFormat::synthetic;
      cfg.synthetic_train = 100;
      cfg.synthetic_test = 10;
      data = harness::load_data(cfg);
    }
    auto r = harness::train(cfg, data);
    fs::remove_all(cfg.output_dir);
    const double first = r.steps.front().loss_total, last = r.steps.back().loss_total;
    const double drop = 1.0 - last / first;
    const bool hit = r.steps.size() == 200 && drop >= 0.5;
    ok = ok && hit;
    d << "seed " << seed << ": " << fmt("%.3f", first) << " -> " << fmt("%.3f", last) << " (" << fmt("%.0f", 100 * drop)
      << "% drop)" << (hit ? "" : " BELOW 50%") << "; ";
  }
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome desk_training(bool run_training) {
  if (!cifar_dir()) return skip("CIFAR-10 binary files not available; set IR2NET_CIFAR10_DIR to run");
  if (!run_training) return skip("deferred to the acceptance_criterion_7 test entry");
  struct Variant {
    const char* name;
    bool ires;
    bool cirec;
  };
  const Variant variants[] = {{"baseline", false, false}, {"IRes", true, false}, {"CIRec", false, true},
                              {"IRes+CIRec", true, true}};
  std::ostringstream d;
  bool ok = true;
  double base_mean = 0, full_mean = 0;
  for (const auto& v : variants) {
    double sum = 0;
    d << v.name << ":";
    for (std::uint64_t seed : {1, 2, 3}) {
      harness::TrainConfig cfg;
      cfg.backbone.width_den = 4;
      if (v.cirec) cfg.backbone.recovery = cirec(4, 0);
      cfg.ires = {0.15, 0.5, v.ires};
      cfg.seed = seed;
      cfg.epochs = 30;
      cfg.batch_size = 64;
      cfg.eval_every = 30;
      cfg.checkpoint_every = 0;
      cfg.data_format = harness::DataFormat::cifar10;
      cfg.data_dir = cifar_dir();
      cfg.train_subset = 5000;
      cfg.test_subset = 1000;
      cfg.output_dir = scratch(std::string("desk_") + v.name).string();
      auto r = harness::train(cfg);
      fs::remove_all(cfg.output_dir);
      const double acc = r.final_accuracy;
      ok = ok && acc >= 0.45;
      sum += acc;
      d << " " << fmt("%.3f", acc);
      std::printf("  criterion 7: %s seed %llu accuracy %.4f\n", v.name, static_cast<unsigned long long>(seed), acc);
      std::fflush(stdout);
    }
    const double mean = sum / 3.0;
    if (std::strcmp(v.name, "baseline") == 0) base_mean = mean;
    if (std::strcmp(v.name, "IRes+CIRec") == 0) full_mean = mean;
    d << " (mean " << fmt("%.3f", mean) << "); ";
  }
  const bool ordering = full_mean >= base_mean - 0.005;
  ok = ok && ordering;
  d << "IRes+CIRec mean minus baseline mean " << fmt("%+.3f", full_mean - base_mean);
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome persistence() {
  auto dir = scratch("persist");
  harness::TrainConfig cfg;
  cfg.backbone.width_den = 4;
  cfg.backbone.recovery = cirec(4, 0);
  cfg.ires.enabled = true;
  cfg.data_format = harness::DataFormat::synthetic;
  cfg.synthetic_train = 64;
  cfg.synthetic_test = 200;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.output_dir = dir.string();
  auto data = harness::load_data(cfg);
  auto run = harness::train(cfg, data);

  auto bytes = harness::read_file(run.final_checkpoint);
  auto ck = harness::decode_checkpoint(bytes);
  auto again = harness::encode_checkpoint(ck.config, *ck.model, ck.optimizer.get(), ck.epoch, ck.rng);
  const bool byte_identical = bytes == again;

  // Rebuild the trained weights in a fresh model by copying, then compare with the reload.
  auto src = harness::decode_checkpoint(bytes);
  model::Model copy(cfg.backbone, 12345);
  auto a = src.model->named_tensors(), b = copy.named_tensors();
  bool tensors_equal = a.size() == b.size();
  for (std::size_t i = 0; tensors_equal && i < a.size(); ++i) {
    std::copy(a[i].tensor->data().begin(), a[i].tensor->data().end(), b[i].tensor->mutable_data().begin());
  }
  copy.refresh_caches();
  auto reloaded = harness::load_checkpoint(run.final_checkpoint);
  auto c = reloaded.model->named_tensors();
  for (std::size_t i = 0; tensors_equal && i < a.size(); ++i) {
    tensors_equal = std::memcmp(a[i].tensor->data().data(), c[i].tensor->data().data(),
                                a[i].tensor->data().size_bytes()) == 0;
  }
  harness::Normalization norm{cfg.mean, cfg.std};
  auto before = harness::evaluate(copy, data.test, norm);
  auto after = harness::evaluate(*reloaded.model, data.test, norm);
  bool version_guard = false;
  try {
    auto bad = bytes;
    bad[4] ^= 0x7f;
    harness::decode_checkpoint(bad);
  } catch (const FormatError&) {
    version_guard = true;
  }
  fs::remove_all(dir);
  std::ostringstream d;
  d << "save->load->save " << (byte_identical ? "byte-identical" : "DIFFERS") << " (" << bytes.size()
    << " bytes); tensors " << (tensors_equal ? "bit-exact" : "DIFFER") << "; eval " << before.correct << "/"
    << before.total << " before, " << after.correct << "/" << after.total << " after reload; version mismatch "
    << (version_guard ? "rejected" : "ACCEPTED");
  const bool ok = byte_identical && tensors_equal && before.correct == after.correct && before.total == after.total &&
                  version_guard;
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome shape_properties() {
  int shapes = 0, shape_ok = 0;
  nn::Rng rng(9);
  for (std::int64_t c_n : {8, 16, 24, 48, 64}) {
    recover::TapSet taps;
    taps.taps = {{"t0", 4, 16, 16}, {"t1", 8, 8, 8}};
    taps.last = {"last", c_n, 4, 4};
    std::vector<Tensor> feats{random_tensor({2, 4, 16, 16}, rng), random_tensor({2, 8, 8, 8}, rng)};
    auto last = random_tensor({2, c_n, 4, 4}, rng);
    std::vector<recover::RecoveryConfig> cfgs;
    recover::RecoveryConfig ir;
    ir.mode = recover::RecoveryMode::irec;
    cfgs.push_back(ir);
    for (int r : {1, 2, 4, 8}) {
      if (c_n % r != 0) continue;
      for (int g : {0, 1, 2, 4}) {
        const auto reduced = c_n / r;
        const auto spatial = c_n - reduced;
        const auto groups = g == 0 ? reduced : g;
        if (r > 1 && (reduced % groups != 0 || spatial % groups != 0)) continue;
        cfgs.push_back(cirec(r, g));
      }
    }
    for (const auto& cfg : cfgs) {
      recover::RecoveryHead head(cfg, taps, nn::ActivationKind::hardtanh, rng);
      ++shapes;
      shape_ok += head.forward(feats, last, nn::train_mode()).shape() == last.shape() ? 1 : 0;
    }
  }

  recover::TapSet taps;
  taps.last = {"last", 16, 4, 4};
  recover::RecoveryHead backoff(cirec(1, 1), taps, nn::ActivationKind::hardtanh, rng);
  const bool backs_off = backoff.mode() == recover::RecoveryMode::irec && backoff.irec.fuse.conv.weight.defined();

  int rejected = 0;
  const recover::RecoveryConfig invalid[] = {cirec(3, 1), cirec(4, 3), cirec(2, 3), cirec(128, 1)};
  for (const auto& cfg : invalid) {
    model::BackboneSpec s;  // ResNet-20: C_n = 64
    s.recovery = cfg;
    try {
      model::Model m(s, 0);
    } catch (const ConfigError&) {
      ++rejected;
    }
  }
  std::ostringstream d;
  d << shape_ok << "/" << shapes << " (C_n, r, g) heads keep the penultimate shape; r=1 builds "
    << (backs_off ? "irec" : "NOT irec") << "; " << rejected << "/" << std::size(invalid)
    << " invalid divisibility configs rejected at build";
  const bool ok = shape_ok == shapes && backs_off && rejected == static_cast<int>(std::size(invalid));
  return ok ? pass(d.str()) : fail(d.str());
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  bool run_training = true;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--no-training") == 0) {
      run_training = false;
    } else {
      std::fprintf(stderr, "usage: %s [--only N] [--no-training]\n", argv[0]);
      return 2;
    }
  }

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"kernel exactness", kernel_exactness},
      {"gradient suite", gradient_suite},
      {"complexity reproduction", complexity_reproduction},
      {"recovery cost within scaling cost", q_constraint},
      {"restriction properties", ires_properties},
      {"overfit sanity", overfit_sanity},
      {"desk-scale training", [&] { return desk_training(run_training); }},
      {"persistence", persistence},
      {"shape and back-off properties", shape_properties},
  };

  int failed = 0, skipped = 0, ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (only != 0 && only != id) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* tag = o.status == Status::pass ? "PASS" : o.status == Status::fail ? "FAIL" : "SKIP";
    std::printf("[criterion %d] %s  %s: %s (%.1f s)\n", id, tag, criteria[i].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.status == Status::fail ? 1 : 0;
    skipped += o.status == Status::skip ? 1 : 0;
    ++ran;
  }
  if (failed > 0) return 1;
  if (only != 0 && skipped == ran) return 77;
  return 0;
}
