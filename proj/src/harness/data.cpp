#include "ir2net/data.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

namespace ir2net::harness {

Dataset load_cifar_file(const std::string& path, int num_classes) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() % kRecordBytes != 0) {
    throw FormatError("'" + path + "': " + std::to_string(bytes.size()) + " bytes is not a multiple of the " +
                      std::to_string(kRecordBytes) + "-byte record size");
  }
  Dataset out(bytes.size() / kRecordBytes);
  for (std::size_t r = 0; r < out.size(); ++r) {
    const auto* rec = reinterpret_cast<const std::uint8_t*>(bytes.data()) + r * kRecordBytes;
    if (rec[0] >= num_classes) {
      throw FormatError("'" + path + "' record " + std::to_string(r) + ": label " + std::to_string(rec[0]) +
                        " >= " + std::to_string(num_classes));
    }
    out[r].label = rec[0];
    std::copy(rec + 1, rec + kRecordBytes, out[r].image.begin());
  }
  return out;
}

Cifar10 load_cifar10(const std::string& dir, int num_classes) {
  Cifar10 data;
  for (int i = 1; i <= 5; ++i) {
    auto part = load_cifar_file((std::filesystem::path(dir) / ("data_batch_" + std::to_string(i) + ".bin")).string(),
                                num_classes);
    data.train.insert(data.train.end(), part.begin(), part.end());
  }
  data.test = load_cifar_file((std::filesystem::path(dir) / "test_batch.bin").string(), num_classes);
  return data;
}

void write_cifar_file(const std::string& path, std::span<const Sample> samples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  for (const auto& s : samples) {
    if (s.label < 0 || s.label > 255) throw FormatError("label " + std::to_string(s.label) + " does not fit a byte");
    const auto label = static_cast<char>(s.label);
    f.write(&label, 1);
    f.write(reinterpret_cast<const char*>(s.image.data()), kImageBytes);
  }
  if (!f) throw IoError("write failed for '" + path + "'");
}

Dataset make_synthetic(int count, int num_classes, std::uint64_t seed) {
  if (count < 0 || num_classes < 1) throw ConfigError("synthetic set needs count >= 0 and at least one class");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Per class and channel: a base level plus two plane waves.
  struct Wave {
    double base, amp1, fx1, fy1, ph1, amp2, fx2, fy2, ph2;
  };
  std::vector<std::array<Wave, 3>> protos(static_cast<std::size_t>(num_classes));
  for (auto& p : protos)
    for (auto& w : p) {
      w = {0.25 + 0.5 * unit(rng), 0.25 * unit(rng), 3 * unit(rng), 3 * unit(rng), 2 * std::numbers::pi * unit(rng),
           0.15 * unit(rng),       3 * unit(rng),   3 * unit(rng), 2 * std::numbers::pi * unit(rng)};
    }
  std::normal_distribution<double> noise(0.0, 0.08);
  Dataset out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    auto& s = out[static_cast<std::size_t>(i)];
    s.label = i % num_classes;
    const double shift = 0.1 * (unit(rng) - 0.5);
    for (int c = 0; c < 3; ++c) {
      const auto& w = protos[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(c)];
      for (int y = 0; y < kImageSide; ++y)
        for (int x = 0; x < kImageSide; ++x) {
          const double u = x / double(kImageSide), v = y / double(kImageSide);
          double val = w.base + w.amp1 * std::sin(2 * std::numbers::pi * (w.fx1 * u + w.fy1 * v) + w.ph1) +
                       w.amp2 * std::sin(2 * std::numbers::pi * (w.fx2 * u + w.fy2 * v) + w.ph2) + shift + noise(rng);
          val = std::clamp(val, 0.0, 1.0);
          s.image[static_cast<std::size_t>((c * kImageSide + y) * kImageSide + x)] =
              static_cast<std::uint8_t>(std::lround(val * 255.0));
        }
    }
  }
  return out;
}

void write_synthetic_cifar(const std::string& dir, int train_count, int test_count, int num_classes,
                           std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  // One generator call keeps train and test on the same class prototypes.
  auto all = make_synthetic(train_count + test_count, num_classes, seed);
  std::span<const Sample> train(all.data(), static_cast<std::size_t>(train_count));
  std::span<const Sample> test(all.data() + train_count, static_cast<std::size_t>(test_count));
  const auto per_file = (train.size() + 4) / 5;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto b = std::min(train.size(), i * per_file), e = std::min(train.size(), (i + 1) * per_file);
    write_cifar_file((std::filesystem::path(dir) / ("data_batch_" + std::to_string(i + 1) + ".bin")).string(),
                     train.subspan(b, e - b));
  }
  write_cifar_file((std::filesystem::path(dir) / "test_batch.bin").string(), test);
}

std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound) {
  if (bound == 0) throw ConfigError("bounded_draw with an empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
  for (;;) {
    const auto v = rng();
    if (v < limit) return v % bound;
  }
}

std::vector<int> permutation(int n, std::mt19937_64& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const auto j = bounded_draw(rng, static_cast<std::uint64_t>(i) + 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[j]);
  }
  return idx;
}

std::vector<int> select_subset(int n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto idx = permutation(n, rng);
  if (k > 0 && k < n) idx.resize(static_cast<std::size_t>(k));
  return idx;
}

std::array<std::uint8_t, kImageBytes> crop_flip(const std::array<std::uint8_t, kImageBytes>& img, int dy, int dx,
                                                bool flip) {
  std::array<std::uint8_t, kImageBytes> out{};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < kImageSide; ++y)
      for (int x = 0; x < kImageSide; ++x) {
        const int sy = y + dy;
        const int sx0 = flip ? kImageSide - 1 - x : x;
        const int sx = sx0 + dx;
        if (sy < 0 || sy >= kImageSide || sx < 0 || sx >= kImageSide) continue;
        out[static_cast<std::size_t>((c * kImageSide + y) * kImageSide + x)] =
            img[static_cast<std::size_t>((c * kImageSide + sy) * kImageSide + sx)];
      }
  return out;
}

Batch make_batch(const Dataset& data, std::span<const int> indices, const Normalization& norm,
                 const Augmentation& aug, std::mt19937_64& rng) {
  const auto n = static_cast<std::int64_t>(indices.size());
  Batch b;
  b.images = Tensor::zeros({n, 3, kImageSide, kImageSide});
  b.labels.resize(indices.size());
  auto dst = b.images.mutable_data();
  const auto plane = kImageSide * kImageSide;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& s = data.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(i)]));
    b.labels[static_cast<std::size_t>(i)] = s.label;
    const std::array<std::uint8_t, kImageBytes>* img = &s.image;
    std::array<std::uint8_t, kImageBytes> augmented;
    if (aug.enabled) {
      const auto span = static_cast<std::uint64_t>(2 * aug.pad + 1);
      const int dy = static_cast<int>(bounded_draw(rng, span)) - aug.pad;
      const int dx = static_cast<int>(bounded_draw(rng, span)) - aug.pad;
      const bool flip = bounded_draw(rng, 2) == 1;
      augmented = crop_flip(s.image, dy, dx, flip);
      img = &augmented;
    }
    for (int c = 0; c < 3; ++c) {
      const double m = norm.mean[static_cast<std::size_t>(c)], sd = norm.std[static_cast<std::size_t>(c)];
      for (std::int64_t p = 0; p < plane; ++p) {
        const double v = (*img)[static_cast<std::size_t>(c * plane + p)] / 255.0;
        dst[static_cast<std::size_t>((i * 3 + c) * plane + p)] = static_cast<float>((v - m) / sd);
      }
    }
  }
  return b;
}

}  // namespace ir2net::harness
