#include "doctest.h"
#include "support.hpp"

#include "posenorm/backbone.hpp"
#include "posenorm/model.hpp"
#include "posenorm/posehead.hpp"

using namespace posenorm;

namespace {

MapBatch<float> random_images(int n, int side, std::mt19937_64& rng) {
  MapBatch<float> x(3, n, side, side);
  x.data = testing::random_matrix(3, x.data.cols(), rng, 0, 1).cast<float>();
  return x;
}

Eigen::Index trainable(nn::ParamList<float> params) { return nn::count_trainable(params); }

}  // namespace

TEST_CASE("convnet4 profile") {
  std::mt19937_64 rng(1);
  Backbone<float> net(default_backbone(Arch::convnet4));
  net.init(rng);
  const auto maps = net.forward(random_images(3, 84, rng), true);
  CHECK(maps.final.channels() == 64);
  CHECK(maps.final.height == 10);
  CHECK(maps.final.width == 10);
  CHECK(maps.final.batch == 3);
  CHECK(maps.intermediate.channels() == 64);
  CHECK(maps.intermediate.height == 21);
}

TEST_CASE("resnet18mod profile") {
  std::mt19937_64 rng(2);
  Backbone<float> net(default_backbone(Arch::resnet18mod));
  net.init(rng);
  const auto maps = net.forward(random_images(2, 224, rng), true);
  CHECK(maps.final.channels() == 32);
  CHECK(maps.final.height == 14);
  CHECK(maps.final.width == 14);
  CHECK(maps.intermediate.channels() == 256);
  CHECK(maps.intermediate.height == 14);
}

TEST_CASE("backbone input and tap validation") {
  Backbone<float> net(default_backbone(Arch::convnet4));
  CHECK_THROWS_WITH(net.forward(MapBatch<float>(3, 1, 80, 80), false),
                    doctest::Contains("expected 3x84x84 input, got 3x80x80"));
  BackboneConfig bad = default_backbone(Arch::convnet4);
  bad.tap_point = "layer3";
  CHECK_THROWS_AS(Backbone<float>{bad}, std::invalid_argument);
  BackboneConfig pre = default_backbone(Arch::resnet18mod);
  pre.pretrained = true;
  CHECK_THROWS_AS(Backbone<float>{pre}, std::invalid_argument);
  CHECK(arch_from_string("resnet18mod") == Arch::resnet18mod);
  CHECK_THROWS(arch_from_string("vgg"));
}

TEST_CASE("zero input gives finite output in both modes") {
  std::mt19937_64 rng(3);
  for (Arch arch : {Arch::convnet4, Arch::resnet18mod}) {
    Backbone<float> net(default_backbone(arch));
    net.init(rng);
    const int side = net.config().input_size;
    MapBatch<float> zeros(3, 2, side, side);
    CHECK(net.forward(zeros, true).final.data.allFinite());
    CHECK(net.forward(zeros, false).final.data.allFinite());
  }
}

TEST_CASE("every backbone parameter receives gradient") {
  std::mt19937_64 rng(4);
  for (Arch arch : {Arch::convnet4, Arch::resnet18mod}) {
    Backbone<float> net(default_backbone(arch));
    net.init(rng);
    auto params = net.params();
    nn::zero_grad(params);
    const int side = net.config().input_size;
    const auto maps = net.forward(random_images(2, side, rng), true);
    MapBatch<float> g = maps.final;
    g.data = testing::random_matrix(g.data.rows(), g.data.cols(), rng).cast<float>();
    net.backward(g, nullptr);
    for (auto* p : params) {
      if (!p->trainable) continue;
      INFO(p->name);
      CHECK(p->grad.cwiseAbs().maxCoeff() > 0.0f);
    }
  }
}

TEST_CASE("convnet4 backward matches finite differences in double") {
  std::mt19937_64 rng(5);
  BackboneConfig c = default_backbone(Arch::convnet4);
  c.input_size = 16;  // 16 -> 8 -> 4 -> 2 -> 2
  Backbone<double> net(c);
  net.init(rng);
  MapBatch<double> x(3, 2, 16, 16);
  x.data = testing::random_matrix(3, x.data.cols(), rng);
  const auto m0 = net.forward(x, true);
  const testing::MatrixD R = testing::random_matrix(m0.final.data.rows(), m0.final.data.cols(), rng);
  const testing::MatrixD T = testing::random_matrix(m0.intermediate.data.rows(), m0.intermediate.data.cols(), rng);
  auto params = net.params();
  nn::zero_grad(params);
  net.forward(x, true);
  MapBatch<double> gf = m0.final, gt = m0.intermediate;
  gf.data = R;
  gt.data = T;
  net.backward(gf, &gt);
  nn::Param<double>* w = params[5];  // stage2 conv
  REQUIRE(w->name == "backbone.stage2.conv.weight");
  const testing::MatrixD analytic = w->grad.topLeftCorner(4, 20);
  testing::MatrixD probe = w->value.topLeftCorner(4, 20);
  auto loss = [&](const testing::MatrixD& v) {
    const testing::MatrixD saved = w->value;
    w->value.topLeftCorner(4, 20) = v;
    const auto m = net.forward(x, true);
    w->value = saved;
    return (m.final.data.array() * R.array()).sum() + (m.intermediate.data.array() * T.array()).sum();
  };
  CHECK(testing::max_relative_error(analytic, testing::numeric_gradient(loss, probe), 1e-4) < 1e-4);
}

TEST_CASE("pose head is small relative to resnet18mod") {
  Backbone<float> net(default_backbone(Arch::resnet18mod));
  for (int m : {2, 5, 15}) {
    PoseHead<float> head(pose_head_config(net, m));
    const double ratio = double(trainable(head.params())) / double(trainable(net.params()));
    INFO("M=" << m << " ratio " << ratio);
    CHECK(ratio < 0.02);
  }
}

// The 64->30->M head is about 17% of ConvNet4; see the decisions ledger.
TEST_CASE("pose head is small relative to convnet4" * doctest::should_fail()) {
  Backbone<float> net(default_backbone(Arch::convnet4));
  PoseHead<float> head(pose_head_config(net, 5));
  const double ratio = double(trainable(head.params())) / double(trainable(net.params()));
  INFO("head/backbone parameter ratio " << ratio);
  CHECK(ratio < 0.05);
}
