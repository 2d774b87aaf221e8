#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ir2net/ops.hpp"
#include "ir2net/tensor.hpp"

// Binarization and the bitpacked XNOR/popcount convolution engine.
//
// Bit convention: a set bit encodes +1, a clear bit encodes -1. Positions that
// do not exist (row tails, zero padding) are clear in both the value words and
// the lane mask, so they contribute nothing to a dot product.

namespace ir2net::binary {

/// Derivative of the Bi-Real piecewise-polynomial sign approximation:
/// 2 + 2x on [-1, 0), 2 - 2x on [0, 1), 0 elsewhere.
template <typename T>
constexpr T approx_sign_grad(T x) {
  if (x >= T(-1) && x < T(0)) return T(2) + T(2) * x;
  if (x >= T(0) && x < T(1)) return T(2) - T(2) * x;
  return T(0);
}

/// +1 where x >= 0, -1 otherwise. Backward uses approx_sign_grad.
template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& x);

/// upstream * approx_sign_grad(x), elementwise. Pure, never recorded.
template <typename T>
BasicTensor<T> approx_sign_backward(const BasicTensor<T>& x, const BasicTensor<T>& upstream);

class PackedBitTensor {
 public:
  static constexpr int kWordBits = 64;

  PackedBitTensor() = default;
  /// All lanes invalid; callers mark lanes with set().
  PackedBitTensor(Shape logical_shape, std::int64_t rows, std::int64_t cols);

  const Shape& logical_shape() const { return logical_shape_; }
  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t words_per_row() const { return words_per_row_; }

  std::span<const std::uint64_t> row(std::int64_t r) const {
    return {words_.data() + r * words_per_row_, static_cast<std::size_t>(words_per_row_)};
  }
  std::span<const std::uint64_t> mask_row(std::int64_t r) const {
    return {lane_mask_.data() + r * words_per_row_, static_cast<std::size_t>(words_per_row_)};
  }
  std::span<const std::uint64_t> words() const { return words_; }
  std::span<const std::uint64_t> lane_mask() const { return lane_mask_; }
  std::span<std::uint64_t> mutable_words() { return words_; }
  std::span<std::uint64_t> mutable_lane_mask() { return lane_mask_; }

  /// Marks lane (r, c) valid and stores +1 (`positive`) or -1.
  void set(std::int64_t r, std::int64_t c, bool positive) {
    const auto i = r * words_per_row_ + c / kWordBits;
    const auto bit = std::uint64_t{1} << (c % kWordBits);
    lane_mask_[static_cast<std::size_t>(i)] |= bit;
    if (positive) words_[static_cast<std::size_t>(i)] |= bit;
  }
  bool valid(std::int64_t r, std::int64_t c) const { return test(lane_mask_, r, c); }
  bool positive(std::int64_t r, std::int64_t c) const { return test(words_, r, c); }

  friend bool operator==(const PackedBitTensor&, const PackedBitTensor&) = default;

 private:
  bool test(const std::vector<std::uint64_t>& v, std::int64_t r, std::int64_t c) const {
    return (v[static_cast<std::size_t>(r * words_per_row_ + c / kWordBits)] >> (c % kWordBits)) & 1u;
  }

  Shape logical_shape_;
  std::int64_t rows_ = 0, cols_ = 0, words_per_row_ = 0;
  std::vector<std::uint64_t> words_;
  std::vector<std::uint64_t> lane_mask_;
};

/// Packs sign(x). Rank >= 2 tensors pack one row per leading index; vectors
/// and scalars pack into a single row.
template <typename T>
PackedBitTensor pack(const BasicTensor<T>& x);

/// Inverse of pack on valid lanes (+1 / -1); invalid lanes decode to 0.
template <typename T>
BasicTensor<T> unpack(const PackedBitTensor& p);

/// Sum over lanes valid in `mask` of (+1 if a and b agree, -1 otherwise),
/// i.e. 2 * popcount(XNOR(a, b) & mask) - popcount(mask).
std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> mask,
                      std::span<const std::uint64_t> b);

struct BinaryConvOptions {
  int stride = 1;
  int padding = 0;
  /// Multiply outputs by alpha_c * beta (alpha: mean |w| of output channel c,
  /// beta: mean |x| of the layer input). Both are treated as constants.
  bool scaling = false;
};

/// sign(input) (*) sign(weight) computed with XNOR + popcount.
///
/// Padded positions contribute 0. Without scaling every output is an integer.
/// Backward: activations receive the approx-sign surrogate, latent weights a
/// straight-through gradient clipped to |w| <= 1. `packed_weight`, when
/// given, must equal pack(weight) and skips repacking.
template <typename T>
BasicTensor<T> binary_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, BinaryConvOptions opt = {},
                             const PackedBitTensor* packed_weight = nullptr);

/// input [N, in], weight [out, in]: 1x1 binary convolution on flattened features.
template <typename T>
BasicTensor<T> binary_linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool scaling = false);

/// Latent-weight binary convolution layer with a cached packed copy of sign(w).
struct BinaryConvLayer {
  Tensor weight;  // latent real weights [Cout, Cin, K, K]
  int stride = 1;
  int padding = 0;
  bool scaling = false;

  /// Re-derives packed_cache from the current latent weights.
  void refresh_cache();
  void invalidate_cache() { cache_valid_ = false; }
  bool cache_valid() const { return cache_valid_; }
  const PackedBitTensor& packed_cache() const { return packed_cache_; }

  /// Uses the cache when valid, otherwise packs on the fly.
  Tensor forward(const Tensor& input) const;

 private:
  PackedBitTensor packed_cache_;
  bool cache_valid_ = false;
};

}  // namespace ir2net::binary
