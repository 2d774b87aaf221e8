#include "ir2net/binary.hpp"

#include <bit>
#include <cmath>

#include "ir2net/counters.hpp"

namespace ir2net::binary {

template <typename T>
BasicTensor<T> sign(const BasicTensor<T>& x) {
  auto out = BasicTensor<T>::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] >= T(0) ? T(1) : T(-1);
  auto* tape = active_tape<T>();
  if (tape && x.requires_grad()) {
    std::shared_ptr<TensorStorage<T>> ins[] = {x.storage()};
    tape->record("sign", ins, out.storage(), [xs = x.storage()](std::span<const T> g) {
      auto& dx = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * approx_sign_grad(xs->data[i]);
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> approx_sign_backward(const BasicTensor<T>& x, const BasicTensor<T>& upstream) {
  if (x.shape() != upstream.shape()) throw DimensionError("approx_sign_backward: shape mismatch");
  auto out = BasicTensor<T>::zeros(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = upstream.data()[i] * approx_sign_grad(x.data()[i]);
  return out;
}

PackedBitTensor::PackedBitTensor(Shape logical_shape, std::int64_t rows, std::int64_t cols)
    : logical_shape_(std::move(logical_shape)),
      rows_(rows),
      cols_(cols),
      words_per_row_((cols + kWordBits - 1) / kWordBits),
      words_(static_cast<std::size_t>(rows * words_per_row_), 0),
      lane_mask_(static_cast<std::size_t>(rows * words_per_row_), 0) {}

template <typename T>
PackedBitTensor pack(const BasicTensor<T>& x) {
  const std::int64_t rows = x.ndim() >= 2 ? x.dim(0) : 1;
  const std::int64_t cols = rows == 0 ? 0 : x.numel() / rows;
  PackedBitTensor p(x.shape(), rows, cols);
  auto d = x.data();
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t c = 0; c < cols; ++c) p.set(r, c, d[static_cast<std::size_t>(r * cols + c)] >= T(0));
  return p;
}

template <typename T>
BasicTensor<T> unpack(const PackedBitTensor& p) {
  auto out = BasicTensor<T>::zeros(p.logical_shape());
  auto o = out.mutable_data();
  for (std::int64_t r = 0; r < p.rows(); ++r)
    for (std::int64_t c = 0; c < p.cols(); ++c) {
      if (p.valid(r, c)) o[static_cast<std::size_t>(r * p.cols() + c)] = p.positive(r, c) ? T(1) : T(-1);
    }
  return out;
}

std::int64_t xnor_dot(std::span<const std::uint64_t> a, std::span<const std::uint64_t> mask,
                      std::span<const std::uint64_t> b) {
  std::int64_t agree = 0, valid = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    agree += std::popcount(~(a[i] ^ b[i]) & mask[i]);
    valid += std::popcount(mask[i]);
  }
  return 2 * agree - valid;
}

namespace {

struct Geometry {
  std::int64_t n, cin, h, w, cout, kh, kw, oh, ow;
  std::int64_t fan_in() const { return cin * kh * kw; }
};

Geometry geometry(const Shape& in, const Shape& wt, const BinaryConvOptions& opt) {
  if (in.size() != 4) throw DimensionError("binary_conv2d input expects rank 4, got " + shape_str(in));
  if (wt.size() != 4) throw DimensionError("binary_conv2d weight expects rank 4, got " + shape_str(wt));
  if (wt[1] != in[1]) {
    throw DimensionError("binary_conv2d: weight expects " + std::to_string(wt[1]) + " input channels, got " +
                         std::to_string(in[1]));
  }
  const auto oh = conv_out_size(in[2], wt[2], opt.stride, opt.padding);
  const auto ow = conv_out_size(in[3], wt[3], opt.stride, opt.padding);
  if (oh < 1 || ow < 1) throw ConfigError("binary_conv2d: non-positive output size");
  return {in[0], in[1], in[2], in[3], wt[0], wt[2], wt[3], oh, ow};
}

// One packed row per output position of sample `b`; lane order matches the
// weight layout (ci, ky, kx).
template <typename T>
PackedBitTensor pack_patches(const T* x, const Geometry& g, const BinaryConvOptions& opt, std::int64_t b) {
  PackedBitTensor p({g.oh * g.ow, g.fan_in()}, g.oh * g.ow, g.fan_in());
  const T* img = x + b * g.cin * g.h * g.w;
  const auto wpr = p.words_per_row();
  std::uint64_t* bits = p.mutable_words().data();
  std::uint64_t* mask = p.mutable_lane_mask().data();
  for (std::int64_t oy = 0; oy < g.oh; ++oy)
    for (std::int64_t ox = 0; ox < g.ow; ++ox) {
      const auto row = oy * g.ow + ox;
      std::uint64_t* rb = bits + row * wpr;
      std::uint64_t* rm = mask + row * wpr;
      std::uint64_t wb = 0, wm = 0;
      std::int64_t lane = 0, word = 0;
      auto push = [&](bool valid, bool positive) {
        const auto bit = std::uint64_t{1} << lane;
        if (valid) wm |= bit;
        if (positive) wb |= bit;
        if (++lane == PackedBitTensor::kWordBits) {
          rb[word] = wb;
          rm[word] = wm;
          ++word;
          lane = 0;
          wb = wm = 0;
        }
      };
      for (std::int64_t ci = 0; ci < g.cin; ++ci) {
        const T* plane = img + ci * g.h * g.w;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const auto iy = oy * opt.stride - opt.padding + ky;
          const bool row_ok = iy >= 0 && iy < g.h;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const auto ix = ox * opt.stride - opt.padding + kx;
            if (row_ok && ix >= 0 && ix < g.w) {
              push(true, plane[iy * g.w + ix] >= T(0));
            } else {
              push(false, false);
            }
          }
        }
      }
      if (lane > 0) {
        rb[word] = wb;
        rm[word] = wm;
      }
    }
  return p;
}

template <typename T>
std::vector<T> channel_alpha(std::span<const T> w, std::int64_t cout) {
  const auto per = static_cast<std::int64_t>(w.size()) / cout;
  std::vector<T> alpha(static_cast<std::size_t>(cout));
  for (std::int64_t c = 0; c < cout; ++c) {
    double acc = 0;
    for (std::int64_t i = 0; i < per; ++i) acc += std::abs(static_cast<double>(w[static_cast<std::size_t>(c * per + i)]));
    alpha[static_cast<std::size_t>(c)] = static_cast<T>(std::max(acc / static_cast<double>(per), 1e-12));
  }
  return alpha;
}

}  // namespace

template <typename T>
BasicTensor<T> binary_conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, BinaryConvOptions opt,
                             const PackedBitTensor* packed_weight) {
  const auto g = geometry(input.shape(), weight.shape(), opt);
  PackedBitTensor local;
  if (packed_weight == nullptr) {
    local = pack(weight);
    packed_weight = &local;
  } else if (packed_weight->rows() != g.cout || packed_weight->cols() != g.fan_in()) {
    throw DimensionError("binary_conv2d: packed weight does not match weight shape");
  }

  const auto P = g.oh * g.ow;
  auto out = BasicTensor<T>::zeros({g.n, g.cout, g.oh, g.ow});
  T* o = out.mutable_data().data();
  const T* x = input.data().data();
  const auto wpr = packed_weight->words_per_row();
  const std::uint64_t* wbits = packed_weight->words().data();
  for (std::int64_t b = 0; b < g.n; ++b) {
    const auto patches = pack_patches(x, g, opt, b);
    const std::uint64_t* pbits = patches.words().data();
    const std::uint64_t* pmask = patches.mask_row(0).data();
    T* base = o + b * g.cout * P;
    for (std::int64_t p = 0; p < P; ++p) {
      const std::uint64_t* a = pbits + p * wpr;
      const std::uint64_t* m = pmask + p * wpr;
      std::int64_t valid = 0;
      for (std::int64_t i = 0; i < wpr; ++i) valid += std::popcount(m[i]);
      for (std::int64_t co = 0; co < g.cout; ++co) {
        const std::uint64_t* w = wbits + co * wpr;
        std::int64_t agree = 0;
        for (std::int64_t i = 0; i < wpr; ++i) agree += std::popcount(~(a[i] ^ w[i]) & m[i]);
        base[co * P + p] = static_cast<T>(2 * agree - valid);
      }
    }
  }
  counters::add("binary.packed_conv");
  counters::add("binary.packed_macs", static_cast<std::uint64_t>(g.n * g.cout * g.fan_in() * P));

  // Per-output-channel multiplier; ones when scaling is off.
  std::vector<T> factor(static_cast<std::size_t>(g.cout), T(1));
  if (opt.scaling) {
    double beta = 0;
    for (auto v : input.data()) beta += std::abs(static_cast<double>(v));
    beta = std::max(beta / static_cast<double>(std::max<std::int64_t>(input.numel(), 1)), 1e-12);
    const auto alpha = channel_alpha(weight.data(), g.cout);
    for (std::int64_t c = 0; c < g.cout; ++c) {
      factor[static_cast<std::size_t>(c)] = static_cast<T>(alpha[static_cast<std::size_t>(c)] * beta);
    }
    for (std::int64_t b = 0; b < g.n; ++b)
      for (std::int64_t c = 0; c < g.cout; ++c)
        for (std::int64_t p = 0; p < P; ++p) o[(b * g.cout + c) * P + p] *= factor[static_cast<std::size_t>(c)];
  }

  auto* tape = active_tape<T>();
  if (tape && (input.requires_grad() || weight.requires_grad())) {
    std::shared_ptr<TensorStorage<T>> ins[] = {input.storage(), weight.storage()};
    const Conv2dParams cp{opt.stride, opt.padding, 1};
    tape->record("binary_conv2d", ins, out.storage(),
                 [xs = input.storage(), ws = weight.storage(), g, cp, factor, scaling = opt.scaling](std::span<const T> grad) {
                   const auto P = g.oh * g.ow;
                   std::vector<T> scaled_buf;
                   std::span<const T> scaled = grad;
                   if (scaling) {
                     scaled_buf.assign(grad.begin(), grad.end());
                     for (std::int64_t b = 0; b < g.n; ++b)
                       for (std::int64_t c = 0; c < g.cout; ++c)
                         for (std::int64_t p = 0; p < P; ++p)
                           scaled_buf[static_cast<std::size_t>((b * g.cout + c) * P + p)] *= factor[static_cast<std::size_t>(c)];
                     scaled = scaled_buf;
                   }
                   if (xs->requires_grad) {
                     std::vector<T> wsign(ws->data.size());
                     for (std::size_t i = 0; i < wsign.size(); ++i) wsign[i] = ws->data[i] >= T(0) ? T(1) : T(-1);
                     std::vector<T> dsign(xs->data.size(), T(0));
                     detail::conv2d_grad_input<T>(scaled, wsign, xs->shape, ws->shape, cp, dsign);
                     auto& dx = xs->grad_buffer();
                     for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsign[i] * approx_sign_grad(xs->data[i]);
                   }
                   if (ws->requires_grad) {
                     std::vector<T> xsign(xs->data.size());
                     for (std::size_t i = 0; i < xsign.size(); ++i) xsign[i] = xs->data[i] >= T(0) ? T(1) : T(-1);
                     std::vector<T> dsign(ws->data.size(), T(0));
                     detail::conv2d_grad_weight<T>(scaled, xsign, xs->shape, ws->shape, cp, dsign);
                     auto& dw = ws->grad_buffer();
                     for (std::size_t i = 0; i < dw.size(); ++i) {
                       if (std::abs(ws->data[i]) <= T(1)) dw[i] += dsign[i];
                     }
                   }
                 });
  }
  return out;
}

template <typename T>
BasicTensor<T> binary_linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, bool scaling) {
  if (input.ndim() != 2 || weight.ndim() != 2) throw DimensionError("binary_linear expects rank-2 input and weight");
  if (input.dim(1) != weight.dim(1)) {
    throw DimensionError("binary_linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(input.shape()));
  }
  const auto n = input.dim(0), in = input.dim(1), out = weight.dim(0);
  auto x4 = reshape(input, {n, in, 1, 1});
  auto w4 = reshape(weight, {out, in, 1, 1});
  BinaryConvOptions opt;
  opt.scaling = scaling;
  return reshape(binary_conv2d(x4, w4, opt), {n, out});
}

void BinaryConvLayer::refresh_cache() {
  packed_cache_ = pack(weight);
  cache_valid_ = true;
}

Tensor BinaryConvLayer::forward(const Tensor& input) const {
  BinaryConvOptions opt{stride, padding, scaling};
  return binary_conv2d(input, weight, opt, cache_valid_ ? &packed_cache_ : nullptr);
}

template BasicTensor<float> sign(const BasicTensor<float>&);
template BasicTensor<double> sign(const BasicTensor<double>&);
template BasicTensor<float> approx_sign_backward(const BasicTensor<float>&, const BasicTensor<float>&);
template BasicTensor<double> approx_sign_backward(const BasicTensor<double>&, const BasicTensor<double>&);
template PackedBitTensor pack(const BasicTensor<float>&);
template PackedBitTensor pack(const BasicTensor<double>&);
template BasicTensor<float> unpack(const PackedBitTensor&);
template BasicTensor<double> unpack(const PackedBitTensor&);
template BasicTensor<float> binary_conv2d(const BasicTensor<float>&, const BasicTensor<float>&, BinaryConvOptions,
                                          const PackedBitTensor*);
template BasicTensor<double> binary_conv2d(const BasicTensor<double>&, const BasicTensor<double>&, BinaryConvOptions,
                                           const PackedBitTensor*);
template BasicTensor<float> binary_linear(const BasicTensor<float>&, const BasicTensor<float>&, bool);
template BasicTensor<double> binary_linear(const BasicTensor<double>&, const BasicTensor<double>&, bool);

}  // namespace ir2net::binary
