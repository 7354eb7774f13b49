#include "doctest.h"
#include "support.hpp"

#include "posenorm/nn.hpp"
#include "posenorm/optim.hpp"

using namespace posenorm;
using testing::MatrixD;

namespace {

/// Checks dL/dx and every trainable parameter gradient of a layer for
/// L = sum(R .* layer(x)).
double layer_grad_error(nn::Layer<double>& layer, const MapBatch<double>& x, bool train,
                        std::mt19937_64& rng) {
  const MapBatch<double> y0 = layer.forward(x, train);
  const MatrixD R = testing::random_matrix(y0.data.rows(), y0.data.cols(), rng);
  nn::ParamList<double> params;
  layer.collect(params);
  nn::zero_grad(params);
  layer.forward(x, train);
  MapBatch<double> seed = y0;
  seed.data = R;
  const MapBatch<double> gx = layer.backward(seed);

  auto loss_at = [&](const MatrixD& input) {
    MapBatch<double> xi = x;
    xi.data = input;
    return (layer.forward(xi, train).data.array() * R.array()).sum();
  };
  double worst = testing::max_relative_error(gx.data, testing::numeric_gradient(loss_at, x.data));
  for (auto* p : params) {
    if (!p->trainable) continue;
    const MatrixD analytic = p->grad;
    auto loss_param = [&](const MatrixD& v) {
      const MatrixD saved = p->value;
      p->value = v;
      const double l = (layer.forward(x, train).data.array() * R.array()).sum();
      p->value = saved;
      return l;
    };
    worst = std::max(worst, testing::max_relative_error(
                                analytic, testing::numeric_gradient(loss_param, p->value)));
  }
  return worst;
}

MapBatch<double> random_batch(int c, int n, int h, int w, std::mt19937_64& rng) {
  MapBatch<double> x(c, n, h, w);
  x.data = testing::random_matrix(c, x.data.cols(), rng);
  return x;
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  std::mt19937_64 rng(1);
  for (auto [k, stride, pad, bias] : {std::tuple{3, 1, 1, true}, {3, 2, 1, false}, {1, 1, 0, true},
                                      {7, 2, 3, false}}) {
    nn::Conv2d<double> conv("c", 3, 4, k, stride, pad, bias);
    conv.init(rng);
    if (bias) conv.bias().value = testing::random_matrix(4, 1, rng);
    const auto x = random_batch(3, 2, 7, 6, rng);
    CHECK(layer_grad_error(conv, x, true, rng) < 1e-6);
  }
}

TEST_CASE("conv2d matches a direct convolution loop") {
  std::mt19937_64 rng(2);
  nn::Conv2d<double> conv("c", 2, 3, 3, 2, 1, true);
  conv.init(rng);
  conv.bias().value = testing::random_matrix(3, 1, rng);
  const auto x = random_batch(2, 2, 5, 5, rng);
  const auto y = conv.forward(x, false);
  REQUIRE(y.height == 3);
  double worst = 0;
  for (int n = 0; n < 2; ++n)
    for (int o = 0; o < 3; ++o)
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
          double acc = conv.bias().value(o, 0);
          for (int kh = 0; kh < 3; ++kh)
            for (int kw = 0; kw < 3; ++kw)
              for (int i = 0; i < 2; ++i) {
                const int ih = r * 2 - 1 + kh, iw = c * 2 - 1 + kw;
                if (ih < 0 || iw < 0 || ih >= 5 || iw >= 5) continue;
                acc += conv.weight().value(o, (kh * 3 + kw) * 2 + i) * x.data(i, n * 25 + ih * 5 + iw);
              }
          worst = std::max(worst, std::abs(acc - y.data(o, n * 9 + r * 3 + c)));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("batch norm gradients in train and eval mode") {
  std::mt19937_64 rng(3);
  nn::BatchNorm2d<double> bn("bn", 3);
  nn::ParamList<double> ps;
  bn.collect(ps);
  ps[0]->value = testing::random_matrix(3, 1, rng, 0.5, 1.5);
  ps[1]->value = testing::random_matrix(3, 1, rng);
  const auto x = random_batch(3, 2, 3, 3, rng);
  CHECK(layer_grad_error(bn, x, true, rng) < 1e-5);
  CHECK(layer_grad_error(bn, x, false, rng) < 1e-6);
}

TEST_CASE("frozen batch norm keeps running statistics") {
  std::mt19937_64 rng(4);
  nn::BatchNorm2d<double> bn("bn", 2);
  nn::ParamList<double> ps;
  bn.collect(ps);
  for (auto* p : ps) p->frozen = true;
  const MatrixD before = ps[2]->value;
  bn.forward(random_batch(2, 3, 2, 2, rng), true);
  CHECK(ps[2]->value == before);
}

TEST_CASE("relu, sigmoid, max pool and resize gradients") {
  std::mt19937_64 rng(5);
  nn::ReLU<double> relu;
  nn::Sigmoid<double> sig;
  nn::MaxPool2d<double> pool2(2, 2), pool3(3, 2, 1);
  nn::BilinearResize<double> down(7, 7, 4, 4), up(4, 4, 6, 6);
  CHECK(layer_grad_error(relu, random_batch(2, 2, 4, 4, rng), true, rng) < 1e-6);
  CHECK(layer_grad_error(sig, random_batch(2, 2, 4, 4, rng), true, rng) < 1e-6);
  CHECK(layer_grad_error(pool2, random_batch(2, 2, 5, 5, rng), true, rng) < 1e-6);
  CHECK(layer_grad_error(pool3, random_batch(2, 2, 7, 7, rng), true, rng) < 1e-6);
  CHECK(layer_grad_error(down, random_batch(2, 2, 7, 7, rng), true, rng) < 1e-6);
  CHECK(layer_grad_error(up, random_batch(2, 1, 4, 4, rng), true, rng) < 1e-6);
}

TEST_CASE("bilinear resize preserves constants") {
  nn::BilinearResize<double> r(21, 21, 10, 10);
  MapBatch<double> x(1, 1, 21, 21);
  x.data.setConstant(0.7);
  CHECK((r.forward(x, false).data.array() - 0.7).abs().maxCoeff() < 1e-12);
}

TEST_CASE("residual block gradients with and without projection") {
  std::mt19937_64 rng(6);
  nn::BasicBlock<double> same("b", 3, 3, 1), proj("p", 2, 4, 2);
  same.init(rng);
  proj.init(rng);
  CHECK(layer_grad_error(same, random_batch(3, 2, 4, 4, rng), false, rng) < 1e-5);
  CHECK(layer_grad_error(proj, random_batch(2, 2, 5, 5, rng), false, rng) < 1e-5);
}

TEST_CASE("optimizer refuses frozen parameters") {
  nn::Param<float> a("a", 2, 2), b("b", 2, 2);
  a.grad.setOnes();
  nn::Optimizer<float> sgd(nn::OptimizerSpec{});
  sgd.step({&a});
  CHECK(a.value(0, 0) == doctest::Approx(-0.1));
  b.frozen = true;
  const MatrixF before = a.value;
  CHECK_THROWS_AS(sgd.step({&a, &b}), nn::FrozenParameterError);
  CHECK(a.value == before);
}

TEST_CASE("adam takes a learning-rate sized first step") {
  nn::Param<double> p("p", 1, 1);
  p.grad(0, 0) = 3.0;
  nn::OptimizerSpec spec;
  spec.kind = nn::OptimizerKind::adam;
  spec.learning_rate = 0.01;
  nn::Optimizer<double> adam(spec);
  adam.step({&p});
  CHECK(p.value(0, 0) == doctest::Approx(-0.01).epsilon(1e-6));
}
