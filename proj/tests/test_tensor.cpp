#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ir2net/ops.hpp"
#include "support/gradcheck.hpp"

using namespace ir2net;
using testing_support::gradcheck;
using testing_support::random_wide;
using testing_support::random_wide_avoiding;

namespace {

constexpr double kWideTol = 1e-4;

Tensor tensor_of(Shape s, std::vector<float> v) { return Tensor::from(std::move(s), std::move(v)); }

WideTensor grad_leaf(WideTensor t) {
  t.set_requires_grad(true);
  return t;
}

}  // namespace

TEST_CASE("conv2d examples") {
  auto x = tensor_of({1, 1, 2, 2}, {1, 2, 3, 4});
  auto w = tensor_of({1, 1, 1, 1}, {2});
  auto y = conv2d(x, w);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(std::vector<float>(y.data().begin(), y.data().end()) == std::vector<float>{2, 4, 6, 8});

  auto z = conv2d(Tensor::zeros({2, 3, 5, 5}), Tensor::full({4, 3, 3, 3}, 0.7f), {1, 1, 1});
  for (float v : z.data()) CHECK(v == 0.0f);
}

TEST_CASE("conv2d errors") {
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 3, 3, 3})), DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3})), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), {0, 0, 1}), ConfigError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), {1, -1, 1}), ConfigError);
}

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(1);
  auto x = grad_leaf(random_wide({2, 3, 8, 8}, rng));
  auto w = grad_leaf(random_wide({4, 3, 3, 3}, rng));
  for (Conv2dParams p : {Conv2dParams{1, 0, 1}, Conv2dParams{2, 1, 1}, Conv2dParams{1, 1, 3}}) {
    auto wp = p.groups == 1 ? w : grad_leaf(random_wide({6, 1, 3, 3}, rng));
    auto r = gradcheck([p](const auto& in) { return conv2d(in[0], in[1], p); }, {x, wp});
    CHECK(r.worst() <= kWideTol);
  }
}

TEST_CASE("grouped conv with uneven output split matches per-group convolutions") {
  std::mt19937_64 rng(2);
  auto x = random_wide({1, 4, 5, 5}, rng);
  auto w = random_wide({5, 2, 3, 3}, rng);  // 2 groups, 5 outputs split 2 + 3
  auto y = conv2d(x, w, {1, 1, 2});
  for (int g = 0; g < 2; ++g) {
    const auto ob = group_out_begin(5, 2, g), oe = group_out_begin(5, 2, g + 1);
    auto xg = slice_channels(x, g * 2, 2);
    auto wg = reshape(WideTensor::from({oe - ob, 2, 3, 3},
                                       std::vector<double>(w.data().begin() + ob * 18, w.data().begin() + oe * 18)),
                      {oe - ob, 2, 3, 3});
    auto yg = conv2d(xg, wg, {1, 1, 1});
    auto ys = slice_channels(y, ob, oe - ob);
    for (std::int64_t i = 0; i < yg.numel(); ++i) CHECK(yg.data()[i] == doctest::Approx(ys.data()[i]).epsilon(1e-12));
  }
  CHECK(group_out_begin(5, 2, 1) == 2);
  auto r = gradcheck([](const auto& in) { return conv2d(in[0], in[1], {1, 1, 2}); },
                     {grad_leaf(x), grad_leaf(w)});
  CHECK(r.worst() <= kWideTol);
}

TEST_CASE("batch norm examples") {
  BatchNormOptions eval{false, false, 0.0, 0.1};
  auto rm = Tensor::zeros({2});
  auto rv = Tensor::full({2}, 1.0f);
  std::mt19937_64 rng(3);
  std::normal_distribution<float> d;
  auto x = Tensor::zeros({3, 2, 4, 4});
  for (auto& v : x.mutable_data()) v = d(rng);
  auto y = batch_norm2d(x, Tensor::full({2}, 1.0f), Tensor::zeros({2}), rm, rv, eval);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  auto c = Tensor::full({4, 2, 3, 3}, 5.5f);
  auto z = batch_norm2d(c, Tensor::full({2}, 1.0f), Tensor::zeros({2}), rm, rv, BatchNormOptions{});
  for (float v : z.data()) CHECK(std::abs(v) < 1e-6);
  for (float v : rv.data()) CHECK(v >= 0.0f);
}

TEST_CASE("batch norm output moments follow gamma and beta") {
  std::mt19937_64 rng(4);
  auto x = random_wide({4, 8, 5, 5}, rng, -3, 3);
  auto gamma = random_wide({8}, rng, 0.5, 2.0);
  auto beta = random_wide({8}, rng);
  auto rm = WideTensor::zeros({8});
  auto rv = WideTensor::full({8}, 1.0);
  BatchNormOptions opt;
  opt.epsilon = 1e-12;
  auto y = batch_norm2d(x, gamma, beta, rm, rv, opt);
  for (int c = 0; c < 8; ++c) {
    double s = 0, s2 = 0;
    int m = 0;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 25; ++i) {
        const double v = y.data()[static_cast<std::size_t>((n * 8 + c) * 25 + i)];
        s += v;
        s2 += v * v;
        ++m;
      }
    const double mu = s / m, var = s2 / m - mu * mu;
    CHECK(std::abs(mu - beta.data()[c]) <= 1e-5);
    CHECK(std::abs(var - gamma.data()[c] * gamma.data()[c]) <= 1e-5);
  }
}

TEST_CASE("batch norm running statistics and errors") {
  auto x = Tensor::from({2, 1, 1, 2}, {1, 2, 3, 4});
  auto rm = Tensor::zeros({1});
  auto rv = Tensor::full({1}, 1.0f);
  batch_norm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), rm, rv, BatchNormOptions{});
  CHECK(rm.data()[0] == doctest::Approx(0.25));
  // unbiased batch variance of {1,2,3,4} is 5/3
  CHECK(rv.data()[0] == doctest::Approx(0.9 + 0.1 * 5.0 / 3.0));

  auto frozen_m = rm.data()[0];
  BatchNormOptions no_update;
  no_update.update_running_stats = false;
  batch_norm2d(x, Tensor::full({1}, 1.0f), Tensor::zeros({1}), rm, rv, no_update);
  CHECK(rm.data()[0] == frozen_m);

  CHECK_THROWS_AS(batch_norm2d(Tensor::zeros({0, 1, 2, 2}), Tensor::full({1}, 1.0f), Tensor::zeros({1}), rm, rv,
                               BatchNormOptions{}),
                  ConfigError);
  CHECK_THROWS_AS(batch_norm2d(Tensor::zeros({1, 2, 2, 2}), Tensor::full({1}, 1.0f), Tensor::zeros({1}), rm, rv,
                               BatchNormOptions{}),
                  DimensionError);
}

TEST_CASE("batch norm gradients") {
  std::mt19937_64 rng(5);
  auto x = grad_leaf(random_wide({3, 2, 3, 3}, rng));
  auto g = grad_leaf(random_wide({2}, rng, 0.5, 1.5));
  auto b = grad_leaf(random_wide({2}, rng));
  for (bool training : {true, false}) {
    auto r = gradcheck(
        [training](const auto& in) {
          auto rm = WideTensor::from({2}, {0.1, -0.2});
          auto rv = WideTensor::from({2}, {0.8, 1.3});
          BatchNormOptions opt;
          opt.training = training;
          return batch_norm2d(in[0], in[1], in[2], rm, rv, opt);
        },
        {x, g, b});
    CHECK(r.worst() <= kWideTol);
  }
}

TEST_CASE("bilinear upsampling examples") {
  auto c = upsample_bilinear(Tensor::full({1, 2, 3, 2}, 4.25f), 7, 9);
  for (float v : c.data()) CHECK(v == doctest::Approx(4.25));
  auto one = upsample_bilinear(Tensor::full({1, 1, 1, 1}, -2.0f), 3, 5);
  for (float v : one.data()) CHECK(v == -2.0f);

  auto r = upsample_bilinear(WideTensor::from({1, 1, 2, 2}, {0, 1, 0, 1}), 2, 4);
  const std::vector<double> row{0, 0.25, 0.75, 1};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) CHECK(r.data()[i * 4 + j] == doctest::Approx(row[j]).epsilon(1e-12));

  CHECK_THROWS_AS(upsample_bilinear(Tensor::zeros({1, 1, 2, 2}), 0, 4), ConfigError);
  CHECK_THROWS_AS(upsample_bilinear(Tensor::zeros({1, 1, 4, 4}), 2, 4), ConfigError);
}

TEST_CASE("adaptive average pooling examples") {
  auto ones = adaptive_avg_pool2d(Tensor::full({1, 1, 4, 4}, 1.0f), 2, 2);
  CHECK(ones.shape() == Shape{1, 1, 2, 2});
  for (float v : ones.data()) CHECK(v == 1.0f);
  auto g = adaptive_avg_pool2d(Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4}), 1, 1);
  CHECK(g.item() == doctest::Approx(2.5));
  std::mt19937_64 rng(6);
  auto x = random_wide({2, 3, 5, 7}, rng);
  auto same = adaptive_avg_pool2d(x, 5, 7);
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(same.data()[i] == x.data()[i]);
  // 5 -> 3 windows: [0,2) [1,4) [3,5)
  auto p = adaptive_avg_pool2d(WideTensor::from({1, 1, 1, 5}, {1, 2, 3, 4, 5}), 1, 3);
  CHECK(p.data()[0] == doctest::Approx(1.5));
  CHECK(p.data()[1] == doctest::Approx(3.0));
  CHECK(p.data()[2] == doctest::Approx(4.5));
  CHECK_THROWS_AS(adaptive_avg_pool2d(Tensor::zeros({1, 1, 2, 2}), 3, 2), ConfigError);
}

TEST_CASE("cross entropy examples") {
  const std::vector<int> t0{0};
  CHECK(cross_entropy(Tensor::zeros({1, 10}), t0).item() == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(cross_entropy(Tensor::from({1, 3}, {100, 0, 0}), t0).item() == doctest::Approx(0.0).epsilon(1e-6));
  const std::vector<int> t1{1};
  CHECK(cross_entropy(WideTensor::from({1, 2}, {1, 2}), t1).item() == doctest::Approx(0.313262).epsilon(1e-6));

  const std::vector<int> batch{3, 0, 6};
  const double uniform = cross_entropy(WideTensor::full({3, 7}, 0.4), batch).item();
  CHECK(std::abs(uniform - std::log(7.0)) <= 1e-12);

  const std::vector<int> bad{10};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 10}), bad), IndexError);
  const std::vector<int> neg{-1};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 10}), neg), IndexError);
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(7);
  auto x = grad_leaf(random_wide({3, 4}, rng));
  {
    Tape<double> tape;
    TapeScope<double> s(&tape);
    backward(sum(x));
  }
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> s(&tape);
    backward(sum(mul(x, x)));
  }
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2 * x.data()[i]));

  Tape<double> tape;
  TapeScope<double> s(&tape);
  auto y = mul(x, x);
  CHECK_THROWS_AS(backward(y), ContractError);
  auto l = sum(y);
  backward(l);
  CHECK_THROWS_AS(backward(l), ContractError);
}

TEST_CASE("tape records parents once and visits each node once") {
  auto x = WideTensor::from({2}, {0.5, -1.5});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> s(&tape);
  auto a = mul(x, x);
  auto b = add(a, a);
  auto c = mul(b, a);
  auto loss = sum(c);
  for (const auto& node : tape.nodes()) {
    auto p = node.parents;
    std::sort(p.begin(), p.end());
    CHECK(std::adjacent_find(p.begin(), p.end()) == p.end());
    for (auto q : p) CHECK(q < static_cast<std::int64_t>(&node - tape.nodes().data()));
  }
  CHECK(tape.nodes()[1].parents.size() == 1);  // add(a, a)
  backward(loss);
  for (int v : tape.visits()) CHECK(v == 1);
  // d/dx sum(2 x^4) = 8 x^3
  CHECK(x.grad()[0] == doctest::Approx(8 * 0.125));
  CHECK(x.grad()[1] == doctest::Approx(8 * -3.375));
}

TEST_CASE("a tape does not adopt tensors recorded on an earlier tape") {
  auto x = WideTensor::from({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  WideTensor stale;
  {
    Tape<double> first;
    TapeScope<double> s(&first);
    stale = mul(x, x);
  }
  Tape<double> second;
  TapeScope<double> s(&second);
  auto y = add(stale, x);
  CHECK(second.nodes().back().parents.empty());
  CHECK_FALSE(stale.on_tape(&second));
  backward(sum(y));
  CHECK(x.grad()[0] == 1.0);
}

TEST_CASE("no-grad scope records nothing") {
  auto x = WideTensor::from({2}, {1.0, 2.0});
  x.set_requires_grad(true);
  Tape<double> tape;
  TapeScope<double> s(&tape);
  {
    NoGradScope<double> off;
    auto y = mul(x, x);
    CHECK_FALSE(y.on_tape(&tape));
  }
  CHECK(tape.size() == 0);
}

TEST_CASE("elementwise and reduction gradients") {
  std::mt19937_64 rng(8);
  auto a = grad_leaf(random_wide({2, 3, 4}, rng));
  auto b = grad_leaf(random_wide({2, 3, 4}, rng));
  CHECK(gradcheck([](const auto& in) { return add(in[0], in[1]); }, {a, b}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return sub(in[0], in[1]); }, {a, b}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return mul(in[0], in[1]); }, {a, b}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return scale(in[0], -2.5); }, {a}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return square(in[0]); }, {a}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return sum(in[0]); }, {a}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return mean(in[0]); }, {a}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return reshape(in[0], {4, 6}); }, {a}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return flatten(in[0]); }, {a}).worst() <= kWideTol);
}

TEST_CASE("activation gradients") {
  std::mt19937_64 rng(9);
  auto x = grad_leaf(random_wide_avoiding({2, 3, 4, 4}, rng, {-1.0, 0.0, 1.0}));
  auto slope = grad_leaf(random_wide({3}, rng, 0.05, 0.5));
  CHECK(gradcheck([](const auto& in) { return relu(in[0]); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return hardtanh(in[0]); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return prelu(in[0], in[1]); }, {x, slope}).worst() <= kWideTol);
}

TEST_CASE("pooling, resampling and plumbing gradients") {
  std::mt19937_64 rng(10);
  auto x = grad_leaf(random_wide({2, 3, 6, 6}, rng));
  CHECK(gradcheck([](const auto& in) { return max_pool2d(in[0], 2, 2); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return max_pool2d(in[0], 3, 2, 1); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return avg_pool2d(in[0], 2, 2); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return adaptive_avg_pool2d(in[0], 4, 3); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return global_avg_pool(in[0]); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return upsample_bilinear(in[0], 9, 13); }, {x}).worst() <= kWideTol);
  CHECK(gradcheck([](const auto& in) { return slice_channels(in[0], 1, 2); }, {x}).worst() <= kWideTol);

  auto y = grad_leaf(random_wide({2, 2, 6, 6}, rng));
  CHECK(gradcheck(
            [](const auto& in) {
              std::vector<WideTensor> parts{in[0], in[1]};
              return concat_channels<double>(parts);
            },
            {x, y})
            .worst() <= kWideTol);

  auto feat = grad_leaf(random_wide({3, 5}, rng));
  auto w = grad_leaf(random_wide({4, 5}, rng));
  auto b = grad_leaf(random_wide({4}, rng));
  CHECK(gradcheck([](const auto& in) { return linear(in[0], in[1], in[2]); }, {feat, w, b}).worst() <= kWideTol);

  const std::vector<int> targets{1, 0, 3};
  auto logits = grad_leaf(random_wide({3, 4}, rng, -3, 3));
  CHECK(gradcheck([&](const auto& in) { return cross_entropy(in[0], targets); }, {logits}).worst() <= kWideTol);
}

TEST_CASE("composite conv -> bn -> relu -> linear graph") {
  std::mt19937_64 rng(11);
  auto x = grad_leaf(random_wide({2, 3, 6, 6}, rng));
  auto w = grad_leaf(random_wide({4, 3, 3, 3}, rng));
  auto g = grad_leaf(random_wide({4}, rng, 0.5, 1.5));
  auto b = grad_leaf(random_wide({4}, rng));
  auto fw = grad_leaf(random_wide({5, 4 * 3 * 3}, rng));
  auto fb = grad_leaf(random_wide({5}, rng));
  const std::vector<int> targets{2, 4};
  auto r = gradcheck(
      [&](const auto& in) {
        auto rm = WideTensor::zeros({4});
        auto rv = WideTensor::full({4}, 1.0);
        auto h = conv2d(in[0], in[1], {2, 1, 1});
        h = batch_norm2d(h, in[2], in[3], rm, rv, BatchNormOptions{});
        h = relu(h);
        return cross_entropy(linear(flatten(h), in[4], in[5]), targets);
      },
      {x, w, g, b, fw, fb});
  for (double e : r.rel_error) CHECK(e <= kWideTol);
}

TEST_CASE("concat then slice is the identity") {
  std::mt19937_64 rng(12);
  auto a = random_wide({2, 3, 4, 4}, rng);
  auto b = random_wide({2, 1, 4, 4}, rng);
  auto c = random_wide({2, 2, 4, 4}, rng);
  std::vector<WideTensor> parts{a, b, c};
  auto cat = concat_channels<double>(parts);
  CHECK(cat.dim(1) == 6);
  std::int64_t off = 0;
  for (const auto& p : parts) {
    auto back = slice_channels(cat, off, p.dim(1));
    CHECK(std::equal(back.data().begin(), back.data().end(), p.data().begin()));
    off += p.dim(1);
  }
}

TEST_CASE("hadamard product with ones is the identity") {
  std::mt19937_64 rng(13);
  auto a = random_wide({3, 5, 2}, rng);
  auto y = mul(a, WideTensor::full(a.shape(), 1.0));
  CHECK(std::equal(y.data().begin(), y.data().end(), a.data().begin()));
}

TEST_CASE("standard precision gradients stay within the loose bound") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<float> d(-1, 1);
  auto x = Tensor::zeros({1, 2, 5, 5});
  auto w = Tensor::zeros({3, 2, 3, 3});
  for (auto& v : x.mutable_data()) v = d(rng);
  for (auto& v : w.mutable_data()) v = d(rng);
  w.set_requires_grad(true);
  {
    Tape<float> tape;
    TapeScope<float> s(&tape);
    backward(sum(square(conv2d(x, w, {1, 1, 1}))));
  }
  std::vector<float> analytic(w.grad().begin(), w.grad().end());
  double diff2 = 0, n2 = 0;
  const float eps = 1e-2f;
  for (std::int64_t i = 0; i < w.numel(); ++i) {
    const float orig = w.data()[i];
    auto loss_at = [&](float v) {
      w.mutable_data()[i] = v;
      NoGradScope<float> off;
      return static_cast<double>(sum(square(conv2d(x, w, {1, 1, 1}))).item());
    };
    const double num = (loss_at(orig + eps) - loss_at(orig - eps)) / (2 * eps);
    w.mutable_data()[i] = orig;
    diff2 += (num - analytic[i]) * (num - analytic[i]);
    n2 += num * num;
  }
  CHECK(std::sqrt(diff2 / n2) <= 1e-2);
}
