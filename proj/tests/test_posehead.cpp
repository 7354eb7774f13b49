#include "doctest.h"
#include "support.hpp"

#include "posenorm/backbone.hpp"
#include "posenorm/posehead.hpp"

#include <filesystem>

using namespace posenorm;
using testing::MatrixD;

namespace {

double loop_loss(const MatrixD& pred, const MatrixD& target) {
  long double acc = 0;
  for (Eigen::Index r = 0; r < pred.rows(); ++r)
    for (Eigen::Index c = 0; c < pred.cols(); ++c) {
      long double p = pred(r, c), t = target(r, c);
      p = std::min(std::max(p, 1e-7L), 1.0L - 1e-7L);
      acc -= t * std::log(p) + (1 - t) * std::log(1 - p);
    }
  return double(acc / (pred.rows() * pred.cols()));
}

MatrixD random_binary(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::bernoulli_distribution b(0.3);
  MatrixD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = b(rng);
  return m;
}

}  // namespace

TEST_CASE("pose loss at one half is ln 2") {
  std::mt19937_64 rng(1);
  const MatrixD t = random_binary(5, 100, rng);
  CHECK(std::abs(pose_loss(MatrixD::Constant(5, 100, 0.5), t) - std::log(2.0)) < 1e-12);
}

TEST_CASE("pose loss matches a per-pixel loop") {
  std::mt19937_64 rng(2);
  const MatrixD p = testing::random_matrix(3, 16, rng, 0.001, 0.999);
  const MatrixD t = random_binary(3, 16, rng);
  CHECK(std::abs(pose_loss(p, t) - loop_loss(p, t)) < 1e-12);

  MatrixD soft(2, 2);
  soft << 0.01, 0.99, 0.99, 0.01;
  const double h = -(0.01 * std::log(0.01) + 0.99 * std::log(0.99));
  CHECK(pose_loss(soft, soft) == doctest::Approx(h).epsilon(1e-12));

  MatrixD extreme = MatrixD::Zero(1, 2);
  extreme(0, 1) = 1;
  CHECK(std::isfinite(pose_loss(extreme, MatrixD::Ones(1, 2))));
}

TEST_CASE("pose loss properties") {
  std::mt19937_64 rng(3);
  const MatrixD p = testing::random_matrix(4, 9, rng, 0.01, 0.99);
  const MatrixD t = random_binary(4, 9, rng);
  CHECK(pose_loss(p, t) >= 0);
  const MatrixD near = (t.array() * 0.999999 + 0.0000005).matrix();
  CHECK(pose_loss(near, t) < 1e-5);
  MatrixD pp(4, 9), tp(4, 9);
  const int perm[] = {3, 1, 0, 2};
  for (int i = 0; i < 4; ++i) {
    pp.row(i) = p.row(perm[i]);
    tp.row(i) = t.row(perm[i]);
  }
  CHECK(pose_loss(pp, tp) == doctest::Approx(pose_loss(p, t)).epsilon(1e-14));
  CHECK_THROWS(pose_loss(p, MatrixD(3, 9)));
}

TEST_CASE("pose loss gradient") {
  std::mt19937_64 rng(4);
  const MatrixD p = testing::random_matrix(3, 16, rng, 0.05, 0.95);
  const MatrixD t = random_binary(3, 16, rng);
  const MatrixD numeric = testing::numeric_gradient([&](const MatrixD& x) { return pose_loss(x, t); }, p);
  CHECK(testing::max_relative_error(pose_loss_grad(p, t), numeric) < 1e-4);
}

TEST_CASE("pose head shapes and range") {
  std::mt19937_64 rng(5);
  for (Arch arch : {Arch::convnet4, Arch::resnet18mod}) {
    Backbone<float> probe(default_backbone(arch));
    PoseHeadConfig c;
    c.in_channels = probe.tap_channels();
    c.hidden_channels = arch == Arch::convnet4 ? 30 : 64;
    c.num_parts = 5;
    c.in_size = probe.tap_size();
    c.out_size = probe.out_size();
    PoseHead<float> head(c);
    head.init(rng);
    MapBatch<float> tap(c.in_channels, 2, c.in_size, c.in_size);
    tap.data = testing::random_matrix(tap.data.rows(), tap.data.cols(), rng).cast<float>() * 3.0f;
    const auto m = head.forward(tap, true);
    CHECK(m.channels() == 5);
    CHECK(m.height == probe.out_size());
    CHECK(m.width == probe.out_size());
    CHECK(m.data.minCoeff() > 0.0f);
    CHECK(m.data.maxCoeff() < 1.0f);
    CHECK_THROWS_AS(head.forward(MapBatch<float>(c.in_channels + 1, 1, c.in_size, c.in_size), false),
                    std::invalid_argument);
  }
}

TEST_CASE("pose head with zero output weights predicts one half") {
  std::mt19937_64 rng(6);
  PoseHead<double> head(PoseHeadConfig{});
  head.init(rng);
  head.output_conv().weight().value.setZero();
  MapBatch<double> tap(64, 1, 21, 21);
  tap.data = testing::random_matrix(64, 441, rng);
  const auto m = head.forward(tap, false);
  CHECK((m.data.array() == 0.5).all());
  CHECK(head.forward(tap, false).data == m.data);
}

TEST_CASE("pose head gradient through the logits path") {
  std::mt19937_64 rng(7);
  PoseHeadConfig c{4, 3, 2, 5, 3};
  PoseHead<double> head(c);
  head.init(rng);
  MapBatch<double> tap(4, 2, 5, 5);
  tap.data = testing::random_matrix(4, 50, rng);
  const auto m0 = head.forward(tap, false);
  const MatrixD R = testing::random_matrix(m0.data.rows(), m0.data.cols(), rng);
  const MatrixD T = testing::random_matrix(m0.data.rows(), m0.data.cols(), rng, 0, 1);
  // L = sum(R .* m) + sum over entries of BCE(m, T), with the BCE entering at the logits.
  auto loss = [&](const MatrixD& x) {
    MapBatch<double> in = tap;
    in.data = x;
    const auto m = head.forward(in, false);
    return (m.data.array() * R.array()).sum() + pose_loss(m.data, T) * double(m.data.size());
  };
  auto params = head.params();
  nn::zero_grad(params);
  head.forward(tap, false);
  MapBatch<double> gh = m0, gz = m0;
  gh.data = R;
  gz.data = m0.data - T;
  const auto gx = head.backward(gh, &gz);
  CHECK(testing::max_relative_error(gx.data, testing::numeric_gradient(loss, tap.data)) < 1e-4);
}

TEST_CASE("pck examples") {
  ImageSample s;
  s.image = Image(100, 100);
  s.bbox = BoundingBox{0, 0, 60, 80};  // diagonal 100
  s.keypoints = std::vector<Keypoint>{{25, 35, true}};
  PartHeatmap exact{MatrixF::Zero(1, 100), 10, 10, HeatmapKind::predicted};
  exact.values(0, 3 * 10 + 2) = 1;  // cell centre (25, 35)
  CHECK(pck(exact, s, 1e-9) == 1.0);

  // Offset by exactly 15 pixels: 0.15 of the diagonal.
  s.keypoints = std::vector<Keypoint>{{25, 20, true}};
  CHECK(pck(exact, s, 0.1) == 0.0);
  CHECK(pck(exact, s, 0.2) == 1.0);

  s.keypoints = std::vector<Keypoint>{{25, 20, false}};
  CHECK_THROWS_AS(pck(exact, s, 0.1), std::invalid_argument);
  s.bbox.reset();
  CHECK_THROWS_AS(pck(exact, s, 0.1), std::invalid_argument);
}

TEST_CASE("pck ties resolve to the first cell") {
  PartHeatmap flat{MatrixF::Constant(1, 16, 0.5f), 4, 4, HeatmapKind::predicted};
  const auto peaks = heatmap_peaks(flat, 40, 40);
  CHECK(peaks[0].first == 5.0);
  CHECK(peaks[0].second == 5.0);
}

TEST_CASE("pck curve is monotone and round-trips") {
  std::mt19937_64 rng(8);
  std::vector<PartHeatmap> preds;
  std::vector<SamplePtr> samples;
  std::uniform_real_distribution<double> u(0, 83.99);
  for (int n = 0; n < 20; ++n) {
    std::vector<Keypoint> kps;
    for (int i = 0; i < 4; ++i) kps.push_back({u(rng), u(rng), true});
    samples.push_back(testing::make_sample(n, 0, 84, kps, BoundingBox{0, 0, 84, 84}));
    preds.push_back({testing::random_matrix(4, 100, rng, 0, 1).cast<float>(), 10, 10, HeatmapKind::predicted});
  }
  const auto curve = pck_curve(preds, samples, default_pck_thresholds());
  REQUIRE(curve.size() == 10);
  CHECK(curve.front().threshold == doctest::Approx(0.05));
  CHECK(curve.back().threshold == doctest::Approx(0.5));
  for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i].accuracy >= curve[i - 1].accuracy);

  const auto path = std::filesystem::temp_directory_path() / "posenorm_pck.csv";
  write_pck_table(path, curve);
  const auto back = read_pck_table(path);
  REQUIRE(back.size() == curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) {
    CHECK(back[i].threshold == curve[i].threshold);
    CHECK(back[i].accuracy == curve[i].accuracy);
  }
  std::filesystem::remove(path);
}
