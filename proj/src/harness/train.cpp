#include "ir2net/train.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ir2net/checkpoint.hpp"
#include "ir2net/ires.hpp"
#include "ir2net/ops.hpp"
#include "ir2net/optim.hpp"

namespace fs = std::filesystem;

namespace ir2net::harness {

namespace {

Normalization normalization_of(const TrainConfig& cfg) { return {cfg.mean, cfg.std}; }

Dataset take(const Dataset& all, const std::vector<int>& idx) {
  Dataset out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(all[static_cast<std::size_t>(i)]);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

void dump_divergence(const TrainConfig& cfg, const StepInfo& info, const Tensor& images, double loss_original,
                     double loss_total) {
  double mn = 0, mx = 0, mean = 0, m2 = 0;
  auto d = images.data();
  if (!d.empty()) mn = mx = d[0];
  for (float v : d) {
    mn = std::min<double>(mn, v);
    mx = std::max<double>(mx, v);
    mean += v;
    m2 += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(std::max<std::size_t>(d.size(), 1));
  mean /= n;
  std::ostringstream os;
  os << "non-finite loss at epoch " << info.epoch << ", step " << info.step << "\n"
     << "lr " << fmt(info.lr) << "\n"
     << "loss_original " << fmt(loss_original) << "\n"
     << "loss_total " << fmt(loss_total) << "\n"
     << "batch " << shape_str(images.shape()) << " min " << fmt(mn) << " max " << fmt(mx) << " mean " << fmt(mean)
     << " std " << fmt(std::sqrt(std::max(0.0, m2 / n - mean * mean))) << "\n";
  std::ofstream(fs::path(cfg.output_dir) / "divergence.txt") << os.str();
  throw DivergenceError(os.str());
}

void check_labels(const Dataset& data, int num_classes) {
  for (const auto& s : data) {
    if (s.label < 0 || s.label >= num_classes) {
      throw ConfigError("label " + std::to_string(s.label) + " does not fit a " + std::to_string(num_classes) +
                        "-class model");
    }
  }
}

}  // namespace

Cifar10 load_data(const TrainConfig& cfg) {
  Cifar10 all;
  const int classes = cfg.backbone.num_classes;
  if (cfg.data_format == DataFormat::synthetic) {
    auto pool = make_synthetic(cfg.synthetic_train + cfg.synthetic_test, classes, cfg.seed);
    all.train.assign(pool.begin(), pool.begin() + cfg.synthetic_train);
    all.test.assign(pool.begin() + cfg.synthetic_train, pool.end());
  } else {
    if (cfg.data_dir.empty()) throw ConfigError("data.dir is required for cifar10 data");
    all = load_cifar10(cfg.data_dir, std::max(classes, 10));
  }
  Cifar10 out;
  out.train = take(all.train, select_subset(static_cast<int>(all.train.size()), cfg.train_subset, cfg.seed));
  out.test = take(all.test, select_subset(static_cast<int>(all.test.size()), cfg.test_subset, cfg.seed + 1));
  return out;
}

TrainResult train(const TrainConfig& cfg, const TrainHooks& hooks) { return train(cfg, load_data(cfg), hooks); }

TrainResult train(const TrainConfig& cfg, const Cifar10& data, const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw ConfigError("training split is empty");
  check_labels(data.train, cfg.backbone.num_classes);
  check_labels(data.test, cfg.backbone.num_classes);
  fs::create_directories(cfg.output_dir);

  model::Model model(cfg.backbone, cfg.seed);
  Optimizer opt(cfg.optimizer, cfg);
  const auto params = model.named_tensors();
  std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  const auto norm = normalization_of(cfg);
  const Augmentation aug{cfg.augment, 4};

  TrainResult result;
  result.metrics_path = (fs::path(cfg.output_dir) / "metrics.csv").string();
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot write '" + result.metrics_path + "'");
  {
    std::istringstream cfg_lines(serialize(cfg));
    std::string line;
    while (std::getline(cfg_lines, line)) metrics << "# " << line << "\n";
  }
  metrics << "epoch,train_loss,test_accuracy,keep_fraction_mean,lr\n";
  metrics.flush();

  const int n = static_cast<int>(data.train.size());
  std::int64_t step = 0;
  bool stop = false;
  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    const auto order = permutation(n, rng);
    double loss_sum = 0, keep_sum = 0;
    int batches = 0;
    for (int start = 0; start < n && !stop; start += cfg.batch_size) {
      const auto count = std::min(cfg.batch_size, n - start);
      auto batch = make_batch(data.train, std::span<const int>(order).subspan(static_cast<std::size_t>(start),
                                                                              static_cast<std::size_t>(count)),
                              norm, aug, rng);
      for (const auto& p : params) p.tensor->zero_grad();

      StepInfo info;
      info.epoch = epoch + 1;
      info.step = step + 1;
      info.lr = lr;
      {
        Tape<float> tape;
        TapeScope<float> scope(&tape);
        auto res = ires::ires_step(model, batch.images, batch.labels, cfg.ires);
        info.loss_total = res.loss_total.item();
        info.loss_original = res.loss_original.item();
        info.keep_fraction = res.stats.keep_fraction_mean;
        if (!std::isfinite(info.loss_total)) {
          dump_divergence(cfg, info, batch.images, info.loss_original, info.loss_total);
        }
        backward(res.loss_total);
      }
      opt.step(params, lr);
      model.after_update();

      ++step;
      loss_sum += info.loss_total;
      keep_sum += info.keep_fraction;
      ++batches;
      result.steps.push_back(info);
      if (hooks.on_step) hooks.on_step(info);
      if (cfg.max_steps > 0 && step >= cfg.max_steps) stop = true;
    }

    EpochMetrics em;
    em.epoch = epoch + 1;
    em.train_loss = loss_sum / batches;
    em.keep_fraction_mean = keep_sum / batches;
    em.lr = lr;
    const bool last = stop || epoch + 1 == cfg.epochs;
    if ((cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) || last) {
      em.test_accuracy = data.test.empty() ? 0.0 : evaluate(model, data.test, norm).accuracy();
      result.final_accuracy = em.test_accuracy;
    }
    metrics << em.epoch << "," << fmt(em.train_loss) << ","
            << (em.test_accuracy >= 0 ? fmt(em.test_accuracy) : std::string()) << "," << fmt(em.keep_fraction_mean)
            << "," << fmt(em.lr) << "\n";
    metrics.flush();
    result.epochs.push_back(em);

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint((fs::path(cfg.output_dir) / ("epoch_" + std::to_string(epoch + 1) + ".ir2n")).string(), cfg,
                      model, &opt, epoch + 1, rng);
    }
  }
  result.final_checkpoint = (fs::path(cfg.output_dir) / "final.ir2n").string();
  save_checkpoint(result.final_checkpoint, cfg, model, &opt, static_cast<int>(result.epochs.size()), rng);
  return result;
}

EvalResult evaluate(model::Model& model, const Dataset& data, const Normalization& norm, int batch_size) {
  check_labels(data, model.spec().num_classes);
  NoGradScope<float> off;
  EvalResult r;
  std::mt19937_64 unused;
  const int n = static_cast<int>(data.size());
  std::vector<int> idx;
  for (int start = 0; start < n; start += batch_size) {
    const int count = std::min(batch_size, n - start);
    idx.resize(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    auto batch = make_batch(data, idx, norm, {}, unused);
    auto logits = model.forward(batch.images, nn::eval_mode()).logits;
    const auto k = logits.dim(1);
    auto v = logits.data();
    for (int i = 0; i < count; ++i) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c) {
        if (v[static_cast<std::size_t>(i * k + c)] > v[static_cast<std::size_t>(i * k + best)]) best = c;
      }
      r.correct += best == batch.labels[static_cast<std::size_t>(i)] ? 1 : 0;
      ++r.total;
    }
  }
  return r;
}

EvalResult evaluate_checkpoint(const std::string& checkpoint, const std::string& data_path) {
  auto ck = load_checkpoint(checkpoint);
  Dataset test;
  if (fs::is_directory(data_path)) {
    test = load_cifar_file((fs::path(data_path) / "test_batch.bin").string(), 256);
  } else {
    test = load_cifar_file(data_path, 256);
  }
  return evaluate(*ck.model, test, normalization_of(ck.config));
}

// ---------------------------------------------------------------------------
// image export

void write_pgm(const std::string& path, std::int64_t width, std::int64_t height, const std::vector<std::uint8_t>& px) {
  if (static_cast<std::int64_t>(px.size()) != width * height) throw DimensionError("pgm pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << "P5\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_ppm(const std::string& path, std::int64_t width, std::int64_t height,
               const std::vector<std::uint8_t>& rgb) {
  if (static_cast<std::int64_t>(rgb.size()) != 3 * width * height) throw DimensionError("ppm pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << "P6\n" << width << " " << height << "\n255\n";
  f.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
}

std::vector<std::uint8_t> read_pnm_rgb(const std::string& path, std::int64_t& width, std::int64_t& height) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const auto magic = token();
  if (magic != "P5" && magic != "P6") throw IoError("'" + path + "' is not a binary PGM/PPM file");
  try {
    width = std::stoll(token());
    height = std::stoll(token());
    if (std::stoi(token()) != 255) throw IoError("'" + path + "': only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw IoError("'" + path + "': malformed header");
  }
  const auto channels = magic == "P6" ? 3 : 1;
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(width * height * channels));
  f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size())) throw IoError("'" + path + "': truncated pixel data");
  if (channels == 3) return raw;
  std::vector<std::uint8_t> rgb(raw.size() * 3);
  for (std::size_t i = 0; i < raw.size(); ++i) rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = raw[i];
  return rgb;
}

std::vector<std::uint8_t> to_gray8(std::span<const float> values) {
  std::vector<std::uint8_t> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (!(range > 0)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return out;
}

namespace {

struct NamedImage {
  std::string name;
  std::array<std::uint8_t, kImageBytes> planar{};  // CHW
};

void collect_images(const fs::path& p, std::vector<NamedImage>& out) {
  const auto ext = p.extension().string();
  if (ext == ".bin") {
    auto records = load_cifar_file(p.string(), 256);
    for (std::size_t i = 0; i < records.size(); ++i) {
      out.push_back({p.stem().string() + "_" + std::to_string(i), records[i].image});
    }
  } else if (ext == ".ppm" || ext == ".pgm") {
    std::int64_t w = 0, h = 0;
    auto rgb = read_pnm_rgb(p.string(), w, h);
    if (w != kImageSide || h != kImageSide) {
      throw ConfigError("'" + p.string() + "' is " + std::to_string(w) + "x" + std::to_string(h) + ", expected 32x32");
    }
    NamedImage img{p.stem().string(), {}};
    for (std::int64_t i = 0; i < w * h; ++i)
      for (int c = 0; c < 3; ++c) img.planar[static_cast<std::size_t>(c * w * h + i)] = rgb[static_cast<std::size_t>(3 * i + c)];
    out.push_back(std::move(img));
  }
}

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "lambda%g", lambda);
  return buf;
}

}  // namespace

ExportedFiles export_attention(const std::string& checkpoint, const std::string& images, double lambda,
                               const std::string& out_dir) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
  auto ck = load_checkpoint(checkpoint);
  auto& model = *ck.model;
  if (model.spec().input_h != kImageSide || model.spec().input_w != kImageSide) {
    throw ConfigError("attention export supports 32x32 models only");
  }
  std::vector<NamedImage> inputs;
  std::error_code ec;
  if (fs::is_directory(images, ec)) {
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(images)) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    for (const auto& e : entries) collect_images(e, inputs);
  } else if (fs::exists(images, ec)) {
    collect_images(images, inputs);
  } else {
    throw IoError("cannot read images from '" + images + "'");
  }
  if (inputs.empty()) throw IoError("no .ppm, .pgm or .bin images found in '" + images + "'");

  fs::create_directories(out_dir);
  ExportedFiles files;
  const auto norm = normalization_of(ck.config);
  const auto tag = lambda_tag(lambda);
  const auto plane = kImageSide * kImageSide;
  NoGradScope<float> off;
  for (const auto& img : inputs) {
    Dataset one(1);
    one[0].image = img.planar;
    std::mt19937_64 unused;
    const std::vector<int> idx{0};
    auto batch = make_batch(one, idx, norm, {}, unused);
    auto res = model.forward(batch.images, nn::eval_mode());
    auto f_a = ires::attention_map(res.penultimate);
    auto up = ires::upsample_attention(f_a, kImageSide, kImageSide);
    auto mask = ires::make_mask(f_a, kImageSide, kImageSide, lambda)[0];

    const auto base = (fs::path(out_dir) / (img.name + "_" + tag)).string();
    write_pgm(base + "_attention.pgm", kImageSide, kImageSide, to_gray8(up.data()));
    std::vector<std::uint8_t> mask_px(static_cast<std::size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i) mask_px[static_cast<std::size_t>(i)] = mask.values[static_cast<std::size_t>(i)] ? 255 : 0;
    write_pgm(base + "_mask.pgm", kImageSide, kImageSide, mask_px);
    std::vector<std::uint8_t> rgb(static_cast<std::size_t>(3 * plane));
    for (std::int64_t i = 0; i < plane; ++i)
      for (int c = 0; c < 3; ++c) {
        rgb[static_cast<std::size_t>(3 * i + c)] =
            mask.values[static_cast<std::size_t>(i)] ? img.planar[static_cast<std::size_t>(c * plane + i)] : 0;
      }
    write_ppm(base + "_masked.ppm", kImageSide, kImageSide, rgb);
    files.paths.push_back(base + "_attention.pgm");
    files.paths.push_back(base + "_mask.pgm");
    files.paths.push_back(base + "_masked.ppm");
  }
  return files;
}

complexity::ComplexityReport report_complexity(const TrainConfig& cfg, const std::string& out_dir) {
  model::Model model(cfg.backbone, cfg.seed);
  auto report = complexity::count_model(model);
  fs::create_directories(out_dir);
  std::ofstream(fs::path(out_dir) / "complexity.txt") << complexity::format_text(report);
  std::ofstream(fs::path(out_dir) / "complexity.csv") << complexity::format_csv(report);
  return report;
}

}  // namespace ir2net::harness
