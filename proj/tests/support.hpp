#pragma once

#include "posenorm/datamodel.hpp"
#include "posenorm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>

namespace testing {

using posenorm::MatrixD;

inline MatrixD random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                             double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Central differences of a scalar function of x.
inline MatrixD numeric_gradient(const std::function<double(const MatrixD&)>& f, MatrixD x,
                                double h = 1e-6) {
  MatrixD g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

/// max |a - b| / max(|a|, |b|, floor), elementwise.
inline double max_relative_error(const MatrixD& a, const MatrixD& b, double floor = 1e-6) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), floor});
    worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]) / scale);
  }
  return worst;
}

inline posenorm::SamplePtr make_sample(int id, int class_id, int side,
                                       std::vector<posenorm::Keypoint> kps = {},
                                       std::optional<posenorm::BoundingBox> box = std::nullopt) {
  auto s = std::make_shared<posenorm::ImageSample>();
  s->id = id;
  s->class_id = class_id;
  s->image = posenorm::Image(side, side);
  if (!kps.empty()) s->keypoints = std::move(kps);
  s->bbox = box;
  return s;
}

}  // namespace testing
