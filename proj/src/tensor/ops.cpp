#include "ir2net/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "ir2net/counters.hpp"

namespace ir2net {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
Tape<T>* recording_tape(std::initializer_list<const BasicTensor<T>*> inputs) {
  auto* tape = active_tape<T>();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <typename T, typename F>
void record(Tape<T>* tape, std::string_view op, std::initializer_list<const BasicTensor<T>*> inputs,
            const BasicTensor<T>& out, F&& fn) {
  std::vector<StoragePtr<T>> ins;
  for (const auto* t : inputs) {
    if (t->defined()) ins.push_back(t->storage());
  }
  tape->record(op, ins, out.storage(), std::forward<F>(fn));
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(s));
  }
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw DimensionError(std::string(what) + ": shape " + shape_str(a) + " vs " + shape_str(b));
}

struct Nchw {
  std::int64_t n, c, h, w;
};

Nchw nchw(const Shape& s, const char* what) {
  require_rank(s, 4, what);
  return {s[0], s[1], s[2], s[3]};
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  auto out = BasicTensor<T>::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (auto* tape = recording_tape<T>({&a, &b})) {
    record(tape, "add", {&a, &b}, out, [as = a.storage(), bs = b.storage()](std::span<const T> g) {
      if (as->requires_grad) as->accumulate(g);
      if (bs->requires_grad) bs->accumulate(g);
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  auto out = BasicTensor<T>::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (auto* tape = recording_tape<T>({&a, &b})) {
    record(tape, "sub", {&a, &b}, out, [as = a.storage(), bs = b.storage()](std::span<const T> g) {
      if (as->requires_grad) as->accumulate(g);
      if (bs->requires_grad) {
        auto& gb = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  auto out = BasicTensor<T>::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (auto* tape = recording_tape<T>({&a, &b})) {
    record(tape, "mul", {&a, &b}, out, [as = a.storage(), bs = b.storage()](std::span<const T> g) {
      if (as->requires_grad) {
        auto& ga = as->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bs->data[i];
      }
      if (bs->requires_grad) {
        auto& gb = bs->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * as->data[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  auto out = BasicTensor<T>::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * factor;
  if (auto* tape = recording_tape<T>({&a})) {
    record(tape, "scale", {&a}, out, [as = a.storage(), factor](std::span<const T> g) {
      auto& ga = as->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  auto out = BasicTensor<T>::zeros(a.shape());
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * x[i];
  if (auto* tape = recording_tape<T>({&a})) {
    record(tape, "square", {&a}, out, [as = a.storage()](std::span<const T> g) {
      auto& ga = as->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += T(2) * as->data[i] * g[i];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  T acc = 0;
  for (auto v : a.data()) acc += v;
  auto out = BasicTensor<T>::scalar(acc);
  if (auto* tape = recording_tape<T>({&a})) {
    record(tape, "sum", {&a}, out, [as = a.storage()](std::span<const T> g) {
      auto& ga = as->grad_buffer();
      for (auto& v : ga) v += g[0];
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  if (a.numel() == 0) throw ConfigError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto out = BasicTensor<T>::from(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (auto* tape = recording_tape<T>({&a})) {
    record(tape, "reshape", {&a}, out, [as = a.storage()](std::span<const T> g) { as->accumulate(g); });
  }
  return out;
}

template <typename T>
BasicTensor<T> flatten(const BasicTensor<T>& a) {
  if (a.ndim() < 1) throw DimensionError("flatten of a scalar");
  const auto n = a.dim(0);
  return reshape(a, {n, n == 0 ? 0 : a.numel() / n});
}

// ---------------------------------------------------------------------------
// activations

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  auto out = BasicTensor<T>::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[i] > T(0) ? in[i] : T(0);
  if (auto* tape = recording_tape<T>({&x})) {
    record(tape, "relu", {&x}, out, [xs = x.storage()](std::span<const T> g) {
      auto& gx = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (xs->data[i] > T(0)) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> hardtanh(const BasicTensor<T>& x, T lo, T hi) {
  auto out = BasicTensor<T>::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::clamp(in[i], lo, hi);
  if (auto* tape = recording_tape<T>({&x})) {
    record(tape, "hardtanh", {&x}, out, [xs = x.storage(), lo, hi](std::span<const T> g) {
      auto& gx = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = xs->data[i];
        if (v > lo && v < hi) gx[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> prelu(const BasicTensor<T>& x, const BasicTensor<T>& slope) {
  if (x.ndim() < 2) throw DimensionError("prelu expects [N, C, ...]");
  const auto n = x.dim(0), c = x.dim(1);
  if (slope.numel() != c) {
    throw DimensionError("prelu slope has " + std::to_string(slope.numel()) + " entries for " + std::to_string(c) +
                         " channels");
  }
  const auto inner = c == 0 || n == 0 ? 0 : x.numel() / (n * c);
  auto out = BasicTensor<T>::zeros(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  auto a = slope.data();
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < inner; ++i) {
        const auto k = (b * c + ch) * inner + i;
        o[k] = in[k] > T(0) ? in[k] : a[ch] * in[k];
      }
  if (auto* tape = recording_tape<T>({&x, &slope})) {
    record(tape, "prelu", {&x, &slope}, out,
           [xs = x.storage(), as = slope.storage(), n, c, inner](std::span<const T> g) {
             for (std::int64_t b = 0; b < n; ++b)
               for (std::int64_t ch = 0; ch < c; ++ch)
                 for (std::int64_t i = 0; i < inner; ++i) {
                   const auto k = static_cast<std::size_t>((b * c + ch) * inner + i);
                   const T v = xs->data[k];
                   if (xs->requires_grad) xs->grad_buffer()[k] += v > T(0) ? g[k] : as->data[ch] * g[k];
                   if (as->requires_grad && v <= T(0)) as->grad_buffer()[ch] += v * g[k];
                 }
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// convolution

std::int64_t group_out_begin(std::int64_t out_channels, int groups, int g) {
  return (out_channels * g) / groups;
}

std::int64_t conv_out_size(std::int64_t in, std::int64_t kernel, int stride, int padding) {
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (padding < 0) throw ConfigError("padding must be >= 0");
  const auto span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

namespace {

struct ConvGeom {
  std::int64_t n, cin, h, w, cout, kh, kw, oh, ow, cin_g;
  int stride, pad, groups;
  std::int64_t k() const { return cin_g * kh * kw; }
  std::int64_t p() const { return oh * ow; }
};

ConvGeom conv_geometry(const Shape& in, const Shape& wt, const Conv2dParams& p) {
  const auto x = nchw(in, "conv2d input");
  require_rank(wt, 4, "conv2d weight");
  if (p.groups < 1) throw ConfigError("conv2d groups must be >= 1");
  if (x.c % p.groups != 0) {
    throw ConfigError("conv2d: " + std::to_string(x.c) + " input channels not divisible by " +
                      std::to_string(p.groups) + " groups");
  }
  const auto cin_g = x.c / p.groups;
  if (wt[1] != cin_g) {
    throw DimensionError("conv2d: weight expects " + std::to_string(wt[1] * p.groups) + " input channels, got " +
                         std::to_string(x.c));
  }
  if (wt[0] < p.groups) throw ConfigError("conv2d: fewer output channels than groups");
  const auto oh = conv_out_size(x.h, wt[2], p.stride, p.padding);
  const auto ow = conv_out_size(x.w, wt[3], p.stride, p.padding);
  if (oh < 1 || ow < 1) {
    throw ConfigError("conv2d: non-positive output size for input " + shape_str(in) + " and kernel " + shape_str(wt));
  }
  return {x.n, x.c, x.h, x.w, wt[0], wt[2], wt[3], oh, ow, cin_g, p.stride, p.padding, p.groups};
}

// col[k, p] for channels [c0, c0 + cin_g) of one sample.
template <typename T>
void im2col(const T* img, const ConvGeom& g, std::int64_t c0, T* col) {
  const auto P = g.p();
  for (std::int64_t ci = 0; ci < g.cin_g; ++ci) {
    const T* plane = img + (c0 + ci) * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = plane + iy * g.w;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
          }
        }
      }
  }
}

template <typename T>
void col2im(const T* col, const ConvGeom& g, std::int64_t c0, T* img) {
  const auto P = g.p();
  for (std::int64_t ci = 0; ci < g.cin_g; ++ci) {
    T* plane = img + (c0 + ci) * g.h * g.w;
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * P;
        for (std::int64_t oy = 0; oy < g.oh; ++oy) {
          const auto iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = plane + iy * g.w;
          const T* src = row + oy * g.ow;
          for (std::int64_t ox = 0; ox < g.ow; ++ox) {
            const auto ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace

namespace detail {

template <typename T>
void conv2d_grad_input(std::span<const T> grad_out, std::span<const T> weight, const Shape& input_shape,
                       const Shape& weight_shape, Conv2dParams p, std::span<T> grad_input) {
  const auto g = conv_geometry(input_shape, weight_shape, p);
  const auto K = g.k(), P = g.p();
  std::vector<T> dcol(static_cast<std::size_t>(K * P));
  for (std::int64_t b = 0; b < g.n; ++b) {
    for (int grp = 0; grp < g.groups; ++grp) {
      const auto o0 = group_out_begin(g.cout, g.groups, grp);
      const auto o1 = group_out_begin(g.cout, g.groups, grp + 1);
      ConstMapMat<T> G(grad_out.data() + (b * g.cout + o0) * P, o1 - o0, P);
      ConstMapMat<T> W(weight.data() + o0 * K, o1 - o0, K);
      MapMat<T> DC(dcol.data(), K, P);
      DC.noalias() = W.transpose() * G;
      col2im(dcol.data(), g, grp * g.cin_g, grad_input.data() + b * g.cin * g.h * g.w);
    }
  }
}

template <typename T>
void conv2d_grad_weight(std::span<const T> grad_out, std::span<const T> input, const Shape& input_shape,
                        const Shape& weight_shape, Conv2dParams p, std::span<T> grad_weight) {
  const auto g = conv_geometry(input_shape, weight_shape, p);
  const auto K = g.k(), P = g.p();
  std::vector<T> col(static_cast<std::size_t>(K * P));
  for (std::int64_t b = 0; b < g.n; ++b) {
    const T* img = input.data() + b * g.cin * g.h * g.w;
    for (int grp = 0; grp < g.groups; ++grp) {
      const auto o0 = group_out_begin(g.cout, g.groups, grp);
      const auto o1 = group_out_begin(g.cout, g.groups, grp + 1);
      ConstMapMat<T> G(grad_out.data() + (b * g.cout + o0) * P, o1 - o0, P);
      im2col(img, g, grp * g.cin_g, col.data());
      ConstMapMat<T> C(col.data(), K, P);
      MapMat<T> DW(grad_weight.data() + o0 * K, o1 - o0, K);
      DW.noalias() += G * C.transpose();
    }
  }
}

template void conv2d_grad_input<float>(std::span<const float>, std::span<const float>, const Shape&, const Shape&,
                                       Conv2dParams, std::span<float>);
template void conv2d_grad_input<double>(std::span<const double>, std::span<const double>, const Shape&, const Shape&,
                                        Conv2dParams, std::span<double>);
template void conv2d_grad_weight<float>(std::span<const float>, std::span<const float>, const Shape&, const Shape&,
                                        Conv2dParams, std::span<float>);
template void conv2d_grad_weight<double>(std::span<const double>, std::span<const double>, const Shape&, const Shape&,
                                         Conv2dParams, std::span<double>);

}  // namespace detail

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight, Conv2dParams p) {
  const auto g = conv_geometry(input.shape(), weight.shape(), p);
  auto out = BasicTensor<T>::zeros({g.n, g.cout, g.oh, g.ow});
  const auto K = g.k(), P = g.p();
  std::vector<T> col(static_cast<std::size_t>(K * P));
  const T* x = input.data().data();
  const T* w = weight.data().data();
  T* o = out.mutable_data().data();
  for (std::int64_t b = 0; b < g.n; ++b) {
    const T* img = x + b * g.cin * g.h * g.w;
    for (int grp = 0; grp < g.groups; ++grp) {
      const auto o0 = group_out_begin(g.cout, g.groups, grp);
      const auto o1 = group_out_begin(g.cout, g.groups, grp + 1);
      im2col(img, g, grp * g.cin_g, col.data());
      ConstMapMat<T> W(w + o0 * K, o1 - o0, K);
      ConstMapMat<T> C(col.data(), K, P);
      MapMat<T> O(o + (b * g.cout + o0) * P, o1 - o0, P);
      O.noalias() = W * C;
    }
  }
  counters::add("conv.macs", static_cast<std::uint64_t>(g.n * g.cout * K * P));

  if (auto* tape = recording_tape<T>({&input, &weight})) {
    record(tape, "conv2d", {&input, &weight}, out, [xs = input.storage(), ws = weight.storage(), p](std::span<const T> grad) {
      if (xs->requires_grad) {
        detail::conv2d_grad_input<T>(grad, ws->data, xs->shape, ws->shape, p, xs->grad_buffer());
      }
      if (ws->requires_grad) {
        detail::conv2d_grad_weight<T>(grad, xs->data, xs->shape, ws->shape, p, ws->grad_buffer());
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight, const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "linear input");
  require_rank(weight.shape(), 2, "linear weight");
  const auto n = input.dim(0), in = input.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != in) {
    throw DimensionError("linear: weight " + shape_str(weight.shape()) + " vs input " + shape_str(input.shape()));
  }
  if (bias.defined() && bias.numel() != outf) throw DimensionError("linear: bias length mismatch");
  auto out = BasicTensor<T>::zeros({n, outf});
  {
    ConstMapMat<T> X(input.data().data(), n, in);
    ConstMapMat<T> W(weight.data().data(), outf, in);
    MapMat<T> O(out.mutable_data().data(), n, outf);
    O.noalias() = X * W.transpose();
    if (bias.defined()) {
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < outf; ++c) O(r, c) += bias.data()[static_cast<std::size_t>(c)];
    }
  }
  if (auto* tape = recording_tape<T>({&input, &weight, &bias})) {
    record(tape, "linear", {&input, &weight, &bias}, out,
           [xs = input.storage(), ws = weight.storage(), bs = bias.storage(), n, in, outf](std::span<const T> grad) {
             ConstMapMat<T> G(grad.data(), n, outf);
             if (xs->requires_grad) {
               MapMat<T> DX(xs->grad_buffer().data(), n, in);
               ConstMapMat<T> W(ws->data.data(), outf, in);
               DX.noalias() += G * W;
             }
             if (ws->requires_grad) {
               MapMat<T> DW(ws->grad_buffer().data(), outf, in);
               ConstMapMat<T> X(xs->data.data(), n, in);
               DW.noalias() += G.transpose() * X;
             }
             if (bs && bs->requires_grad) {
               auto& db = bs->grad_buffer();
               for (std::int64_t r = 0; r < n; ++r)
                 for (std::int64_t c = 0; c < outf; ++c) db[static_cast<std::size_t>(c)] += G(r, c);
             }
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch norm

template <typename T>
BasicTensor<T> batch_norm2d(const BasicTensor<T>& input, const BasicTensor<T>& gamma, const BasicTensor<T>& beta,
                            BasicTensor<T>& running_mean, BasicTensor<T>& running_var, const BatchNormOptions& opt) {
  const auto s = nchw(input.shape(), "batch_norm2d");
  if (gamma.numel() != s.c || beta.numel() != s.c || running_mean.numel() != s.c || running_var.numel() != s.c) {
    throw DimensionError("batch_norm2d: parameter length does not match " + std::to_string(s.c) + " channels");
  }
  const auto hw = s.h * s.w;
  const auto m = s.n * hw;
  if (m == 0) throw ConfigError("batch_norm2d: zero batch*spatial size");
  const T eps = static_cast<T>(opt.epsilon);

  std::vector<T> mu(static_cast<std::size_t>(s.c)), inv_std(static_cast<std::size_t>(s.c));
  const T* x = input.data().data();
  if (opt.training) {
    for (std::int64_t c = 0; c < s.c; ++c) {
      double acc = 0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* p = x + (b * s.c + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
      }
      const double mean_c = acc / static_cast<double>(m);
      double var = 0;
      for (std::int64_t b = 0; b < s.n; ++b) {
        const T* p = x + (b * s.c + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          const double d = p[i] - mean_c;
          var += d * d;
        }
      }
      const double biased = var / static_cast<double>(m);
      mu[static_cast<std::size_t>(c)] = static_cast<T>(mean_c);
      inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(biased + opt.epsilon));
      if (opt.update_running_stats) {
        const double unbiased = m > 1 ? var / static_cast<double>(m - 1) : biased;
        auto rm = running_mean.mutable_data();
        auto rv = running_var.mutable_data();
        rm[static_cast<std::size_t>(c)] =
            static_cast<T>((1.0 - opt.momentum) * rm[static_cast<std::size_t>(c)] + opt.momentum * mean_c);
        rv[static_cast<std::size_t>(c)] =
            static_cast<T>((1.0 - opt.momentum) * rv[static_cast<std::size_t>(c)] + opt.momentum * unbiased);
      }
    }
  } else {
    for (std::int64_t c = 0; c < s.c; ++c) {
      mu[static_cast<std::size_t>(c)] = running_mean.data()[static_cast<std::size_t>(c)];
      inv_std[static_cast<std::size_t>(c)] =
          T(1) / std::sqrt(running_var.data()[static_cast<std::size_t>(c)] + eps);
    }
  }

  auto out = BasicTensor<T>::zeros(input.shape());
  T* o = out.mutable_data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::int64_t b = 0; b < s.n; ++b)
    for (std::int64_t c = 0; c < s.c; ++c) {
      const auto off = (b * s.c + c) * hw;
      const T sc = gm[c] * inv_std[static_cast<std::size_t>(c)];
      const T mc = mu[static_cast<std::size_t>(c)];
      for (std::int64_t i = 0; i < hw; ++i) o[off + i] = (x[off + i] - mc) * sc + bt[c];
    }

  if (auto* tape = recording_tape<T>({&input, &gamma, &beta})) {
    record(tape, "batch_norm2d", {&input, &gamma, &beta}, out,
           [xs = input.storage(), gs = gamma.storage(), bs = beta.storage(), mu, inv_std, s, hw, m,
            training = opt.training](std::span<const T> grad) {
             for (std::int64_t c = 0; c < s.c; ++c) {
               const T mc = mu[static_cast<std::size_t>(c)];
               const T is = inv_std[static_cast<std::size_t>(c)];
               T sum_g = 0, sum_gx = 0;
               for (std::int64_t b = 0; b < s.n; ++b) {
                 const auto off = (b * s.c + c) * hw;
                 for (std::int64_t i = 0; i < hw; ++i) {
                   const T xhat = (xs->data[static_cast<std::size_t>(off + i)] - mc) * is;
                   sum_g += grad[static_cast<std::size_t>(off + i)];
                   sum_gx += grad[static_cast<std::size_t>(off + i)] * xhat;
                 }
               }
               if (gs->requires_grad) gs->grad_buffer()[static_cast<std::size_t>(c)] += sum_gx;
               if (bs->requires_grad) bs->grad_buffer()[static_cast<std::size_t>(c)] += sum_g;
               if (!xs->requires_grad) continue;
               auto& dx = xs->grad_buffer();
               const T gmm = gs->data[static_cast<std::size_t>(c)];
               const T inv_m = T(1) / static_cast<T>(m);
               for (std::int64_t b = 0; b < s.n; ++b) {
                 const auto off = (b * s.c + c) * hw;
                 for (std::int64_t i = 0; i < hw; ++i) {
                   const auto k = static_cast<std::size_t>(off + i);
                   if (training) {
                     const T xhat = (xs->data[k] - mc) * is;
                     dx[k] += gmm * is * (grad[k] - inv_m * sum_g - xhat * inv_m * sum_gx);
                   } else {
                     dx[k] += gmm * is * grad[k];
                   }
                 }
               }
             }
           });
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& input, int kernel, int stride, int padding) {
  const auto s = nchw(input.shape(), "max_pool2d");
  if (kernel < 1) throw ConfigError("max_pool2d: kernel must be >= 1");
  if (padding * 2 > kernel) throw ConfigError("max_pool2d: padding larger than half the kernel");
  const auto oh = conv_out_size(s.h, kernel, stride, padding);
  const auto ow = conv_out_size(s.w, kernel, stride, padding);
  if (oh < 1 || ow < 1) throw ConfigError("max_pool2d: non-positive output size");
  auto out = BasicTensor<T>::zeros({s.n, s.c, oh, ow});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  const T* x = input.data().data();
  T* o = out.mutable_data().data();
  for (std::int64_t plane = 0; plane < s.n * s.c; ++plane)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t where = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const auto iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= s.h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const auto ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= s.w) continue;
            const auto k = plane * s.h * s.w + iy * s.w + ix;
            if (where < 0 || x[k] > best) {
              best = x[k];
              where = k;
            }
          }
        }
        const auto oi = (plane * oh + oy) * ow + ox;
        o[oi] = best;
        argmax[static_cast<std::size_t>(oi)] = where;
      }
  if (auto* tape = recording_tape<T>({&input})) {
    record(tape, "max_pool2d", {&input}, out, [xs = input.storage(), argmax = std::move(argmax)](std::span<const T> g) {
      auto& dx = xs->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) dx[static_cast<std::size_t>(argmax[i])] += g[i];
    });
  }
  return out;
}

namespace {

struct Window {
  std::int64_t begin, end;
};

std::vector<Window> adaptive_windows(std::int64_t in, std::int64_t out) {
  std::vector<Window> w(static_cast<std::size_t>(out));
  for (std::int64_t i = 0; i < out; ++i) {
    w[static_cast<std::size_t>(i)] = {(i * in) / out, ((i + 1) * in + out - 1) / out};
  }
  return w;
}

template <typename T>
BasicTensor<T> window_average(const BasicTensor<T>& input, const std::vector<Window>& rows,
                              const std::vector<Window>& cols, std::string_view op) {
  const auto s = nchw(input.shape(), "pool");
  const auto oh = static_cast<std::int64_t>(rows.size()), ow = static_cast<std::int64_t>(cols.size());
  auto out = BasicTensor<T>::zeros({s.n, s.c, oh, ow});
  const T* x = input.data().data();
  T* o = out.mutable_data().data();
  for (std::int64_t plane = 0; plane < s.n * s.c; ++plane)
    for (std::int64_t oy = 0; oy < oh; ++oy)
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const auto& r = rows[static_cast<std::size_t>(oy)];
        const auto& c = cols[static_cast<std::size_t>(ox)];
        T acc = 0;
        for (auto iy = r.begin; iy < r.end; ++iy)
          for (auto ix = c.begin; ix < c.end; ++ix) acc += x[plane * s.h * s.w + iy * s.w + ix];
        o[(plane * oh + oy) * ow + ox] = acc / static_cast<T>((r.end - r.begin) * (c.end - c.begin));
      }
  if (auto* tape = recording_tape<T>({&input})) {
    record(tape, op, {&input}, out, [xs = input.storage(), rows, cols, s, oh, ow](std::span<const T> g) {
      auto& dx = xs->grad_buffer();
      for (std::int64_t plane = 0; plane < s.n * s.c; ++plane)
        for (std::int64_t oy = 0; oy < oh; ++oy)
          for (std::int64_t ox = 0; ox < ow; ++ox) {
            const auto& r = rows[static_cast<std::size_t>(oy)];
            const auto& c = cols[static_cast<std::size_t>(ox)];
            const T share = g[static_cast<std::size_t>((plane * oh + oy) * ow + ox)] /
                            static_cast<T>((r.end - r.begin) * (c.end - c.begin));
            for (auto iy = r.begin; iy < r.end; ++iy)
              for (auto ix = c.begin; ix < c.end; ++ix)
                dx[static_cast<std::size_t>(plane * s.h * s.w + iy * s.w + ix)] += share;
          }
    });
  }
  return out;
}

}  // namespace

template <typename T>
BasicTensor<T> avg_pool2d(const BasicTensor<T>& input, int kernel, int stride) {
  const auto s = nchw(input.shape(), "avg_pool2d");
  if (kernel < 1) throw ConfigError("avg_pool2d: kernel must be >= 1");
  const auto oh = conv_out_size(s.h, kernel, stride, 0);
  const auto ow = conv_out_size(s.w, kernel, stride, 0);
  if (oh < 1 || ow < 1) throw ConfigError("avg_pool2d: non-positive output size");
  std::vector<Window> rows, cols;
  for (std::int64_t i = 0; i < oh; ++i) rows.push_back({i * stride, i * stride + kernel});
  for (std::int64_t i = 0; i < ow; ++i) cols.push_back({i * stride, i * stride + kernel});
  return window_average(input, rows, cols, "avg_pool2d");
}

template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  const auto s = nchw(input.shape(), "adaptive_avg_pool2d");
  if (out_h < 1 || out_w < 1) throw ConfigError("adaptive_avg_pool2d: non-positive target size");
  if (out_h > s.h || out_w > s.w) {
    throw ConfigError("adaptive_avg_pool2d: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                      " larger than input " + std::to_string(s.h) + "x" + std::to_string(s.w));
  }
  return window_average(input, adaptive_windows(s.h, out_h), adaptive_windows(s.w, out_w), "adaptive_avg_pool2d");
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& input) {
  const auto s = nchw(input.shape(), "global_avg_pool");
  return reshape(adaptive_avg_pool2d(input, 1, 1), {s.n, s.c});
}

template <typename T>
BasicTensor<T> upsample_bilinear(const BasicTensor<T>& input, std::int64_t out_h, std::int64_t out_w) {
  const auto s = nchw(input.shape(), "upsample_bilinear");
  if (out_h < 1 || out_w < 1) throw ConfigError("upsample_bilinear: non-positive target size");
  if (out_h < s.h || out_w < s.w) throw ConfigError("upsample_bilinear: target smaller than input");

  struct Tap {
    std::int64_t i0, i1;
    T frac;
  };
  auto axis = [](std::int64_t in, std::int64_t out) {
    std::vector<Tap> taps(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
      if (src < 0) src = 0;
      auto i0 = static_cast<std::int64_t>(std::floor(src));
      if (i0 > in - 1) i0 = in - 1;
      const auto i1 = std::min(i0 + 1, in - 1);
      taps[static_cast<std::size_t>(o)] = {i0, i1, static_cast<T>(src - static_cast<double>(i0))};
    }
    return taps;
  };
  const auto ty = axis(s.h, out_h);
  const auto tx = axis(s.w, out_w);

  auto out = BasicTensor<T>::zeros({s.n, s.c, out_h, out_w});
  const T* x = input.data().data();
  T* o = out.mutable_data().data();
  for (std::int64_t plane = 0; plane < s.n * s.c; ++plane) {
    const T* p = x + plane * s.h * s.w;
    for (std::int64_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const T top = p[a.i0 * s.w + b.i0] * (T(1) - b.frac) + p[a.i0 * s.w + b.i1] * b.frac;
        const T bot = p[a.i1 * s.w + b.i0] * (T(1) - b.frac) + p[a.i1 * s.w + b.i1] * b.frac;
        o[(plane * out_h + oy) * out_w + ox] = top * (T(1) - a.frac) + bot * a.frac;
      }
    }
  }
  if (auto* tape = recording_tape<T>({&input})) {
    record(tape, "upsample_bilinear", {&input}, out, [xs = input.storage(), ty, tx, s, out_h, out_w](std::span<const T> g) {
      auto& dx = xs->grad_buffer();
      for (std::int64_t plane = 0; plane < s.n * s.c; ++plane) {
        T* p = dx.data() + plane * s.h * s.w;
        for (std::int64_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[static_cast<std::size_t>(oy)];
          for (std::int64_t ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[static_cast<std::size_t>(ox)];
            const T v = g[static_cast<std::size_t>((plane * out_h + oy) * out_w + ox)];
            p[a.i0 * s.w + b.i0] += v * (T(1) - a.frac) * (T(1) - b.frac);
            p[a.i0 * s.w + b.i1] += v * (T(1) - a.frac) * b.frac;
            p[a.i1 * s.w + b.i0] += v * a.frac * (T(1) - b.frac);
            p[a.i1 * s.w + b.i1] += v * a.frac * b.frac;
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// channel plumbing

template <typename T>
BasicTensor<T> concat_channels(std::span<const BasicTensor<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_channels of nothing");
  const auto first = nchw(parts[0].shape(), "concat_channels");
  std::int64_t total_c = 0;
  for (const auto& t : parts) {
    const auto s = nchw(t.shape(), "concat_channels");
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw DimensionError("concat_channels: " + shape_str(t.shape()) + " does not match " +
                           shape_str(parts[0].shape()) + " outside the channel axis");
    }
    total_c += s.c;
  }
  const auto hw = first.h * first.w;
  auto out = BasicTensor<T>::zeros({first.n, total_c, first.h, first.w});
  T* o = out.mutable_data().data();
  std::int64_t c0 = 0;
  for (const auto& t : parts) {
    const auto c = t.dim(1);
    for (std::int64_t b = 0; b < first.n; ++b) {
      std::copy_n(t.data().data() + b * c * hw, c * hw, o + (b * total_c + c0) * hw);
    }
    c0 += c;
  }
  auto* tape = active_tape<T>();
  bool any = false;
  for (const auto& t : parts) any = any || t.requires_grad();
  if (tape && any) {
    std::vector<StoragePtr<T>> ins;
    for (const auto& t : parts) ins.push_back(t.storage());
    tape->record("concat_channels", ins, out.storage(), [ins, total_c, hw, n = first.n](std::span<const T> g) {
      std::int64_t c0 = 0;
      for (const auto& s : ins) {
        const auto c = s->shape[1];
        if (s->requires_grad) {
          auto& d = s->grad_buffer();
          for (std::int64_t b = 0; b < n; ++b)
            for (std::int64_t i = 0; i < c * hw; ++i)
              d[static_cast<std::size_t>(b * c * hw + i)] += g[static_cast<std::size_t>((b * total_c + c0) * hw + i)];
        }
        c0 += c;
      }
    });
  }
  return out;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& input, std::int64_t begin, std::int64_t count) {
  const auto s = nchw(input.shape(), "slice_channels");
  if (begin < 0 || count < 0 || begin + count > s.c) {
    throw IndexError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") outside " + std::to_string(s.c) + " channels");
  }
  const auto hw = s.h * s.w;
  auto out = BasicTensor<T>::zeros({s.n, count, s.h, s.w});
  for (std::int64_t b = 0; b < s.n; ++b) {
    std::copy_n(input.data().data() + (b * s.c + begin) * hw, count * hw, out.mutable_data().data() + b * count * hw);
  }
  if (auto* tape = recording_tape<T>({&input})) {
    record(tape, "slice_channels", {&input}, out, [xs = input.storage(), s, hw, begin, count](std::span<const T> g) {
      auto& d = xs->grad_buffer();
      for (std::int64_t b = 0; b < s.n; ++b)
        for (std::int64_t i = 0; i < count * hw; ++i)
          d[static_cast<std::size_t>((b * s.c + begin) * hw + i)] += g[static_cast<std::size_t>(b * count * hw + i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// loss

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  require_rank(logits.shape(), 2, "cross_entropy logits");
  const auto n = logits.dim(0), k = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                         std::to_string(n));
  }
  if (n == 0) throw ConfigError("cross_entropy: empty batch");
  for (auto t : targets) {
    if (t < 0 || t >= k) throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
  }
  std::vector<T> probs(static_cast<std::size_t>(n * k));
  T total = 0;
  const T* z = logits.data().data();
  for (std::int64_t r = 0; r < n; ++r) {
    const T* row = z + r * k;
    const T mx = *std::max_element(row, row + k);
    T denom = 0;
    for (std::int64_t c = 0; c < k; ++c) denom += std::exp(row[c] - mx);
    const T log_denom = std::log(denom);
    for (std::int64_t c = 0; c < k; ++c) probs[static_cast<std::size_t>(r * k + c)] = std::exp(row[c] - mx - log_denom);
    total += -(row[targets[static_cast<std::size_t>(r)]] - mx - log_denom);
  }
  auto out = BasicTensor<T>::scalar(total / static_cast<T>(n));
  if (auto* tape = recording_tape<T>({&logits})) {
    std::vector<int> tgt(targets.begin(), targets.end());
    record(tape, "cross_entropy", {&logits}, out,
           [zs = logits.storage(), probs = std::move(probs), tgt = std::move(tgt), n, k](std::span<const T> g) {
             auto& d = zs->grad_buffer();
             const T s = g[0] / static_cast<T>(n);
             for (std::int64_t r = 0; r < n; ++r)
               for (std::int64_t c = 0; c < k; ++c) {
                 const auto i = static_cast<std::size_t>(r * k + c);
                 d[i] += s * (probs[i] - (c == tgt[static_cast<std::size_t>(r)] ? T(1) : T(0)));
               }
           });
  }
  return out;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined()) throw ContractError("backward() on an undefined tensor");
  auto* tape = loss.storage()->tape;
  if (tape == nullptr) throw ContractError("backward() loss is not on any tape");
  tape->backward(loss);
}

// ---------------------------------------------------------------------------

#define IR2NET_INSTANTIATE(T)                                                                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                                       \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                                         \
  template BasicTensor<T> square(const BasicTensor<T>&);                                                           \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                              \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                                   \
  template BasicTensor<T> flatten(const BasicTensor<T>&);                                                          \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                                             \
  template BasicTensor<T> hardtanh(const BasicTensor<T>&, T, T);                                                   \
  template BasicTensor<T> prelu(const BasicTensor<T>&, const BasicTensor<T>&);                                     \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, Conv2dParams);                      \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> batch_norm2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,         \
                                       BasicTensor<T>&, BasicTensor<T>&, const BatchNormOptions&);                 \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&, int, int, int);                                        \
  template BasicTensor<T> avg_pool2d(const BasicTensor<T>&, int, int);                                             \
  template BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>&, std::int64_t, std::int64_t);                  \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                                  \
  template BasicTensor<T> upsample_bilinear(const BasicTensor<T>&, std::int64_t, std::int64_t);                    \
  template BasicTensor<T> concat_channels(std::span<const BasicTensor<T>>);                                        \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::int64_t, std::int64_t);                       \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);                              \
  template void backward(const BasicTensor<T>&);

IR2NET_INSTANTIATE(float)
IR2NET_INSTANTIATE(double)

#undef IR2NET_INSTANTIATE

}  // namespace ir2net
