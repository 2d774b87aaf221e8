#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "ir2net/ops.hpp"

// Central finite-difference oracle for the wide-precision autodiff path.
//
// The checked scalar is sum(f(inputs) * R) with a fixed random R, so every
// output element contributes with a distinct weight.

namespace testing_support {

using ir2net::Shape;
using ir2net::WideTensor;

inline WideTensor random_wide(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  auto t = WideTensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) v = d(rng);
  return t;
}

/// Values kept at least `gap` away from every point in `kinks`.
inline WideTensor random_wide_avoiding(Shape shape, std::mt19937_64& rng, std::vector<double> kinks,
                                       double gap = 0.05, double lo = -1.5, double hi = 1.5) {
  std::uniform_real_distribution<double> d(lo, hi);
  auto t = WideTensor::zeros(std::move(shape));
  for (auto& v : t.mutable_data()) {
    for (;;) {
      v = d(rng);
      bool ok = true;
      for (double k : kinks) ok = ok && std::abs(v - k) >= gap;
      if (ok) break;
    }
  }
  return t;
}

struct GradCheckResult {
  std::vector<double> rel_error;  // one entry per input
  double worst() const {
    double w = 0;
    for (double e : rel_error) w = std::max(w, e);
    return w;
  }
};

using WideFn = std::function<WideTensor(const std::vector<WideTensor>&)>;

inline double projected(const WideFn& f, const std::vector<WideTensor>& inputs, const std::vector<double>& proj) {
  ir2net::NoGradScope<double> off;
  auto out = f(inputs);
  double acc = 0;
  for (std::size_t i = 0; i < proj.size(); ++i) acc += out.data()[i] * proj[i];
  return acc;
}

/// Norm-wise relative error ||analytic - numeric|| / max(||analytic||, ||numeric||)
/// for each input; inputs with requires_grad=false are skipped (reported 0).
inline GradCheckResult gradcheck(const WideFn& f, std::vector<WideTensor> inputs, std::uint64_t seed = 7,
                                 double eps = 1e-6) {
  std::mt19937_64 rng(seed);
  std::vector<double> proj;
  {
    ir2net::NoGradScope<double> off;
    auto probe = f(inputs);
    std::uniform_real_distribution<double> d(-1, 1);
    proj.resize(static_cast<std::size_t>(probe.numel()));
    for (auto& p : proj) p = d(rng);
  }

  for (auto& in : inputs) in.zero_grad();
  {
    ir2net::Tape<double> tape;
    ir2net::TapeScope<double> scope(&tape);
    auto out = f(inputs);
    auto r = WideTensor::from(out.shape(), proj);
    auto loss = ir2net::sum(ir2net::mul(out, r));
    ir2net::backward(loss);
  }

  GradCheckResult res;
  for (auto& in : inputs) {
    if (!in.requires_grad()) {
      res.rel_error.push_back(0);
      continue;
    }
    std::vector<double> analytic(static_cast<std::size_t>(in.numel()), 0.0);
    if (in.has_grad()) analytic.assign(in.grad().begin(), in.grad().end());
    double diff2 = 0, a2 = 0, n2 = 0;
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + eps;
      const double up = projected(f, inputs, proj);
      data[i] = orig - eps;
      const double dn = projected(f, inputs, proj);
      data[i] = orig;
      const double numeric = (up - dn) / (2 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    res.rel_error.push_back(denom == 0 ? 0 : std::sqrt(diff2) / denom);
  }
  return res;
}

}  // namespace testing_support
