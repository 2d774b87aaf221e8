#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ir2net/tensor.hpp"

// CIFAR-10 binary-format ingestion, subset selection and batch assembly.
//
// A record is 3073 bytes: one label byte, then 1024 red, 1024 green and
// 1024 blue bytes, each plane row-major.

namespace ir2net::harness {

constexpr std::int64_t kImageSide = 32;
constexpr std::int64_t kImageBytes = 3 * kImageSide * kImageSide;
constexpr std::int64_t kRecordBytes = kImageBytes + 1;

struct Sample {
  std::array<std::uint8_t, kImageBytes> image{};
  int label = 0;
};

using Dataset = std::vector<Sample>;

struct Cifar10 {
  Dataset train, test;
};

/// Parses one batch file. Throws FormatError on a truncated file or a label
/// >= num_classes, IoError when unreadable.
Dataset load_cifar_file(const std::string& path, int num_classes = 10);

/// data_batch_1.bin .. data_batch_5.bin and test_batch.bin under `dir`.
Cifar10 load_cifar10(const std::string& dir, int num_classes = 10);

void write_cifar_file(const std::string& path, std::span<const Sample> samples);

/// Class-conditional synthetic images: each class owns a smooth random colour
/// pattern, samples add per-pixel noise and a random brightness shift.
Dataset make_synthetic(int count, int num_classes, std::uint64_t seed);

/// Writes a synthetic set under `dir` using the CIFAR-10 file layout.
void write_synthetic_cifar(const std::string& dir, int train_count, int test_count, int num_classes,
                           std::uint64_t seed);

/// Uniform integer in [0, bound) from raw 64-bit draws (rejection sampling),
/// identical on every platform for a given engine state.
std::uint64_t bounded_draw(std::mt19937_64& rng, std::uint64_t bound);

/// Fisher-Yates permutation of 0..n-1.
std::vector<int> permutation(int n, std::mt19937_64& rng);

/// First `k` entries of a seeded permutation of 0..n-1 (all of them when k = 0 or k >= n).
std::vector<int> select_subset(int n, int k, std::uint64_t seed);

struct Normalization {
  std::array<double, 3> mean{0.4914, 0.4822, 0.4465};
  std::array<double, 3> std{0.2470, 0.2435, 0.2616};
};

/// Random crop with 4-pixel zero padding and horizontal flip.
struct Augmentation {
  bool enabled = false;
  int pad = 4;
};

/// Normalized [N, 3, 32, 32] batch plus labels, in `indices` order.
struct Batch {
  Tensor images;
  std::vector<int> labels;
};

Batch make_batch(const Dataset& data, std::span<const int> indices, const Normalization& norm,
                 const Augmentation& aug, std::mt19937_64& rng);

/// Augments raw bytes in place of a copy: crop offset (dy, dx) in [-pad, pad], optional flip.
std::array<std::uint8_t, kImageBytes> crop_flip(const std::array<std::uint8_t, kImageBytes>& img, int dy, int dx,
                                                bool flip);

}  // namespace ir2net::harness
