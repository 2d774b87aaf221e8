#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "ir2net/counters.hpp"
#include "ir2net/model.hpp"

using namespace ir2net;
using namespace ir2net::model;

namespace {

Tensor random_batch(std::int64_t n, std::int64_t side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> d(0.0f, 1.0f);
  auto t = Tensor::zeros({n, 3, side, side});
  for (auto& v : t.mutable_data()) v = d(rng);
  return t;
}

BackboneSpec spec_of(Architecture arch, int den = 1) {
  BackboneSpec s;
  s.arch = arch;
  s.width_den = den;
  return s;
}

}  // namespace

TEST_CASE("resnet20 layer census") {
  Model m(spec_of(Architecture::resnet20), 0);
  CHECK(m.binary_conv_count() == 18);
  CHECK(m.real_weight_layer_count(LayerRole::stem) == 1);
  CHECK(m.real_weight_layer_count(LayerRole::classifier) == 1);
  CHECK(m.real_weight_layer_count(LayerRole::shortcut) == 2);
  CHECK(m.real_weight_layer_count(LayerRole::head) == 0);
  CHECK(m.real_weight_layer_count(LayerRole::body) == 0);
}

TEST_CASE("resnet18 taps feed five recovery inputs") {
  auto s = spec_of(Architecture::resnet18);
  s.input_h = s.input_w = 224;
  s.num_classes = 1000;
  Model m(s, 0);
  CHECK(m.binary_conv_count() == 16);
  CHECK(m.real_weight_layer_count(LayerRole::shortcut) == 3);
  const auto& t = m.tap_set();
  REQUIRE(t.taps.size() == 4);
  CHECK(t.taps[0].channels == 64);
  CHECK(t.taps[0].height == 112);
  CHECK(t.taps[1].height == 56);
  CHECK(t.taps[2].height == 28);
  CHECK(t.taps[3].height == 14);
  CHECK(t.last.channels == 512);
  CHECK(t.last.height == 7);
  CHECK(t.concat_channels() == 64 + 64 + 128 + 256 + 512);
}

TEST_CASE("tap sizes never grow and the penultimate map is smallest") {
  for (auto arch : {Architecture::resnet20, Architecture::resnet18, Architecture::vgg_small}) {
    Model m(spec_of(arch, 4), 0);
    const auto& t = m.tap_set();
    REQUIRE_FALSE(t.taps.empty());
    for (std::size_t i = 1; i < t.taps.size(); ++i) CHECK(t.taps[i].height <= t.taps[i - 1].height);
    CHECK(t.last.height < t.taps.front().height);
    CHECK(t.last.height <= t.taps.back().height);
  }
}

TEST_CASE("vgg small layout") {
  Model m(spec_of(Architecture::vgg_small), 0);
  CHECK(m.binary_conv_count() == 5);
  CHECK(m.real_weight_layer_count(LayerRole::stem) == 1);
  CHECK(m.real_weight_layer_count(LayerRole::classifier) == 1);
  CHECK(m.real_weight_layer_count(LayerRole::shortcut) == 0);
  CHECK(m.tap_set().last.channels == 256);
  CHECK(m.tap_set().last.height == 4);
}

TEST_CASE("cifar forward gives one logit row per sample") {
  Model m(spec_of(Architecture::resnet20, 4), 1);
  NoGradScope<float> off;
  auto r = m.forward(random_batch(2, 32, 1), nn::eval_mode());
  CHECK(r.logits.shape() == Shape{2, 10});
  CHECK(r.penultimate.shape() == Shape{2, 16, 8, 8});
  CHECK(r.taps.size() == m.tap_set().taps.size());
  CHECK_THROWS_AS(m.forward(random_batch(2, 16, 1), nn::eval_mode()), DimensionError);
}

TEST_CASE("eval forward is deterministic") {
  Model m(spec_of(Architecture::resnet20, 4), 2);
  auto x = random_batch(3, 32, 2);
  NoGradScope<float> off;
  auto a = m.forward(x, nn::eval_mode()).logits;
  auto b = m.forward(x, nn::eval_mode()).logits;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  Model twin(spec_of(Architecture::resnet20, 4), 2);
  auto c = twin.forward(x, nn::eval_mode()).logits;
  CHECK(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
}

TEST_CASE("full-precision twin runs no packed kernels") {
  auto s = spec_of(Architecture::resnet20, 4);
  s.binarize = false;
  Model fp(s, 3);
  CHECK(fp.binary_conv_count() == 0);
  counters::reset();
  NoGradScope<float> off;
  auto r = fp.forward(random_batch(2, 32, 3), nn::eval_mode());
  CHECK(counters::get("binary.packed_conv") == 0);
  for (float v : r.logits.data()) CHECK(std::isfinite(v));

  Model bin(spec_of(Architecture::resnet20, 4), 3);
  bin.forward(random_batch(2, 32, 3), nn::eval_mode());
  CHECK(counters::get("binary.packed_conv") == 18);
}

TEST_CASE("recovery changes logits but not shapes") {
  auto base = spec_of(Architecture::resnet20, 4);
  auto fused = base;
  fused.recovery.mode = recover::RecoveryMode::irec;
  Model a(base, 4), b(fused, 4);
  auto x = random_batch(2, 32, 4);
  NoGradScope<float> off;
  auto ra = a.forward(x, nn::eval_mode()), rb = b.forward(x, nn::eval_mode());
  CHECK(ra.logits.shape() == rb.logits.shape());
  CHECK(ra.penultimate.shape() == rb.penultimate.shape());
  CHECK_FALSE(std::equal(ra.logits.data().begin(), ra.logits.data().end(), rb.logits.data().begin()));
  CHECK(b.real_weight_layer_count(LayerRole::head) == 1);
}

TEST_CASE("width multiplier scales every channel") {
  Model quarter(spec_of(Architecture::resnet20, 4), 0);
  CHECK(quarter.tap_set().taps[0].channels == 4);
  CHECK(quarter.tap_set().last.channels == 16);
  auto bad = spec_of(Architecture::resnet20, 3);
  CHECK_THROWS_AS(Model(bad, 0), ConfigError);
  auto cirec = spec_of(Architecture::resnet20, 4);
  cirec.recovery.mode = recover::RecoveryMode::cirec;
  cirec.recovery.r = 32;  // 16 / 32 leaves nothing
  CHECK_THROWS_AS(Model(cirec, 0), ConfigError);
}

TEST_CASE("activation follows the stem") {
  CHECK(spec_of(Architecture::resnet20).resolved_activation() == nn::ActivationKind::hardtanh);
  auto big = spec_of(Architecture::resnet18);
  big.input_h = big.input_w = 224;
  CHECK(big.resolved_stem() == Stem::imagenet);
  CHECK(big.resolved_activation() == nn::ActivationKind::prelu);
  big.activation = "relu";
  CHECK(big.resolved_activation() == nn::ActivationKind::relu);
}

TEST_CASE("tensor names are unique and stable") {
  auto s = spec_of(Architecture::resnet20, 4);
  s.recovery.mode = recover::RecoveryMode::cirec;
  s.recovery.r = 4;
  Model m(s, 0);
  std::set<std::string> names;
  for (const auto& t : m.named_tensors()) CHECK(names.insert(t.name).second);
  CHECK(names.count("stem.conv.weight") == 1);
  CHECK(names.count("units.0.conv.weight") == 1);
  CHECK(names.count("classifier.weight") == 1);
  CHECK(names.count("head.channel.conv.weight") == 1);
  CHECK(names.count("head.spatial.conv.weight") == 1);
}

TEST_CASE("after_update clips latent weights") {
  Model m(spec_of(Architecture::resnet20, 4), 0);
  for (const auto& t : m.named_tensors()) {
    if (t.role == nn::TensorRole::latent_binary_weight) t.tensor->mutable_data()[0] = 5.0f;
  }
  m.after_update();
  for (const auto& t : m.named_tensors()) {
    if (t.role != nn::TensorRole::latent_binary_weight) continue;
    for (float v : t.tensor->data()) CHECK(std::fabs(v) <= 1.0f);
  }
}
