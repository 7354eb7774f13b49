#include "doctest.h"
#include "support.hpp"

#include "posenorm/aggregate.hpp"

using namespace posenorm;
using testing::MatrixD;
using VectorD = Vector<double>;

TEST_CASE("avg pool examples") {
  MatrixD F(1, 4);
  F << 1, 2, 3, 4;  // [[1,2],[3,4]]
  CHECK(avg_pool(F)(0) == doctest::Approx(2.5));
  CHECK((avg_pool(MatrixD::Constant(3, 9, 1.25)).array() == 1.25).all());

  std::mt19937_64 rng(1);
  const MatrixD A = testing::random_matrix(4, 9, rng), B = testing::random_matrix(4, 9, rng);
  CHECK((avg_pool(MatrixD(2.0 * A - 3.0 * B)) - (2.0 * avg_pool(A) - 3.0 * avg_pool(B))).norm() < 1e-12);
}

TEST_CASE("pose normalize examples") {
  MatrixD F(1, 4), m(1, 4);
  F << 1, 2, 3, 4;
  m << 1, 0, 0, 1;
  double oracle_num = 0, oracle_den = 0;
  for (int p = 0; p < 4; ++p) {
    oracle_num += F(0, p) * m(0, p);
    oracle_den += m(0, p);
  }
  CHECK(pose_normalize(F, m)(0) == doctest::Approx(oracle_num / (kAttentionEpsilon + oracle_den)).epsilon(1e-15));

  std::mt19937_64 rng(2);
  const MatrixD G = testing::random_matrix(3, 16, rng);
  MatrixD heat = testing::random_matrix(4, 16, rng, 0, 1);
  heat.row(2).setZero();
  const VectorD v = pose_normalize(G, heat);
  REQUIRE(v.size() == 12);
  CHECK((v.segment(6, 3).array() == 0.0).all());

  const VectorD uniform = pose_normalize(G, MatrixD::Constant(2, 16, 0.3));
  const VectorD mean = avg_pool(G);
  for (int i = 0; i < 2; ++i)
    CHECK((uniform.segment(3 * i, 3) - mean).norm() <= mean.norm() * kAttentionEpsilon / (0.3 * 16) * 1.01);
}

TEST_CASE("pose normalize properties") {
  std::mt19937_64 rng(3);
  const MatrixD F = testing::random_matrix(3, 12, rng);
  const MatrixD m = testing::random_matrix(4, 12, rng, 0, 1);
  const VectorD v = pose_normalize(F, m);

  SUBCASE("channel rescaling") {
    for (double c : {0.1, 3.0, 50.0}) {
      MatrixD scaled = m;
      scaled.row(1) *= c;
      const VectorD w = pose_normalize(F, scaled);
      const double bound =
          kAttentionEpsilon * F.cwiseAbs().maxCoeff() * std::abs(1 / c - 1) / (kAttentionEpsilon + m.row(1).sum());
      CHECK((w.segment(3, 3) - v.segment(3, 3)).norm() <= bound * 3 + 1e-14);
    }
  }
  SUBCASE("spatial permutation") {
    std::vector<int> perm(12);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixD Fp(3, 12), mp(4, 12);
    for (int p = 0; p < 12; ++p) {
      Fp.col(p) = F.col(perm[p]);
      mp.col(p) = m.col(perm[p]);
    }
    CHECK((pose_normalize(Fp, mp) - v).norm() < 1e-12);
  }
  SUBCASE("part permutation permutes blocks") {
    const std::vector<int> perm = {2, 0, 3, 1};
    MatrixD mp(4, 12);
    for (int i = 0; i < 4; ++i) mp.row(i) = m.row(perm[i]);
    const VectorD w = pose_normalize(F, mp);
    for (int i = 0; i < 4; ++i) CHECK(w.segment(3 * i, 3) == v.segment(3 * perm[i], 3));
  }
}

TEST_CASE("bilinear pool") {
  MatrixD F(1, 4);
  F << 1, 2, 3, 4;
  CHECK(bilinear_raw(F)(0, 0) == doctest::Approx(30.0));
  CHECK(bilinear_pool(F)(0) == doctest::Approx(1.0));

  std::mt19937_64 rng(4);
  const MatrixD G = testing::random_matrix(5, 9, rng);
  const MatrixD B = bilinear_raw(G);
  CHECK((B - B.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixD>(B).eigenvalues().minCoeff() > -1e-12);
  CHECK(bilinear_pool(G).size() == 25);
  CHECK(bilinear_pool(G).norm() == doctest::Approx(1.0));
  CHECK(representation_size(Layout::bilinear, 64, 5) == 4096);
  CHECK(bilinear_pool(MatrixD::Zero(3, 4)).norm() == 0.0);
}

TEST_CASE("upn assignment") {
  std::mt19937_64 rng(5);
  const MatrixD F = testing::random_matrix(3, 10, rng);
  const MatrixD bank = testing::random_matrix(3, 4, rng);
  const MatrixD a = upn_assign(F, bank, 0.7);
  CHECK((a.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(upn_assign(F, bank, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(upn_assign(F, bank, -1.0), std::invalid_argument);
  CHECK_THROWS(upn_assign(F, MatrixD(2, 4), 1.0));

  const MatrixD one = testing::random_matrix(3, 1, rng);
  CHECK((upn_pool(F, one, 1.0) - avg_pool(F)).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("upn recovers separated cluster means") {
  std::mt19937_64 rng(6);
  MatrixD bank(2, 2);
  bank << 5, -5, 5, -5;
  MatrixD F(2, 20);
  Eigen::Vector2d mean0 = Eigen::Vector2d::Zero(), mean1 = Eigen::Vector2d::Zero();
  std::normal_distribution<double> noise(0, 0.3);
  for (int p = 0; p < 20; ++p) {
    const double centre = p % 2 ? -5 : 5;
    F(0, p) = centre + noise(rng);
    F(1, p) = centre + noise(rng);
    (p % 2 ? mean1 : mean0) += F.col(p) / 10.0;
  }
  const VectorD v = upn_pool(F, bank, 0.05);
  // hard-assignment means under the same attention denominator
  const double shrink = 10.0 / (10.0 + kAttentionEpsilon);
  CHECK((v.segment(0, 2) - shrink * mean0).norm() < 1e-9);
  CHECK((v.segment(2, 2) - shrink * mean1).norm() < 1e-9);
}

TEST_CASE("aggregator gradients match finite differences") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const MatrixD F = testing::random_matrix(4, 25, rng);
    const MatrixD m = testing::random_matrix(3, 25, rng, 0.01, 1);
    const VectorD R = testing::random_matrix(12, 1, rng);
    const AttentionGrad<double> g = pose_normalize_backward(F, m, R);
    CHECK(testing::max_relative_error(
              g.features, testing::numeric_gradient([&](const MatrixD& x) { return R.dot(pose_normalize(x, m)); }, F)) < 1e-4);
    CHECK(testing::max_relative_error(
              g.heatmap, testing::numeric_gradient([&](const MatrixD& x) { return R.dot(pose_normalize(F, x)); }, m)) < 1e-4);

    const VectorD Rb = testing::random_matrix(16, 1, rng);
    CHECK(testing::max_relative_error(
              bilinear_pool_backward(F, Rb),
              testing::numeric_gradient([&](const MatrixD& x) { return Rb.dot(bilinear_pool(x)); }, F)) < 1e-4);

    const MatrixD bank = testing::random_matrix(4, 3, rng);
    const UpnGrad<double> u = upn_pool_backward(F, bank, 1.5, R);
    CHECK(testing::max_relative_error(
              u.features, testing::numeric_gradient([&](const MatrixD& x) { return R.dot(upn_pool(x, bank, 1.5)); }, F)) < 1e-4);
    CHECK(testing::max_relative_error(
              u.bank, testing::numeric_gradient([&](const MatrixD& b) { return R.dot(upn_pool(F, b, 1.5)); }, bank)) < 1e-4);

    CHECK(testing::max_relative_error(
              avg_pool_backward<double>(25, R.head(4)),
              testing::numeric_gradient([&](const MatrixD& x) { return R.head(4).dot(avg_pool(x)); }, F)) < 1e-6);
  }
}
