#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace posenorm {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// A batch of C x H x W maps. Storage is channels x (batch * H * W), so each
/// column is the C-vector at one location; column n*H*W + h*W + w is
/// location (h, w) of image n.
template <typename Scalar>
struct MapBatch {
  Matrix<Scalar> data;
  int batch = 0;
  int height = 0;
  int width = 0;

  MapBatch() = default;
  MapBatch(int channels, int batch_size, int h, int w)
      : data(Matrix<Scalar>::Zero(channels, Eigen::Index(batch_size) * h * w)),
        batch(batch_size), height(h), width(w) {}

  int channels() const { return static_cast<int>(data.rows()); }
  Eigen::Index plane() const { return Eigen::Index(height) * width; }

  auto image(int n) { return data.middleCols(n * plane(), plane()); }
  auto image(int n) const { return data.middleCols(n * plane(), plane()); }

  /// Copy of images [first, first + count).
  MapBatch slice(int first, int count) const {
    MapBatch out;
    out.batch = count;
    out.height = height;
    out.width = width;
    out.data = data.middleCols(first * plane(), count * plane());
    return out;
  }

  template <typename Other>
  MapBatch<Other> cast() const {
    MapBatch<Other> out;
    out.batch = batch;
    out.height = height;
    out.width = width;
    out.data = data.template cast<Other>();
    return out;
  }

  std::string shape_string() const {
    return std::to_string(channels()) + "x" + std::to_string(height) + "x" +
           std::to_string(width);
  }
};

template <typename Scalar>
MapBatch<Scalar> zeros_like(const MapBatch<Scalar>& m) {
  return MapBatch<Scalar>(m.channels(), m.batch, m.height, m.width);
}

/// A batch with the geometry of `m` holding `data` (same number of columns).
template <typename Scalar>
MapBatch<Scalar> shaped_like(const MapBatch<Scalar>& m, Matrix<Scalar> data) {
  MapBatch<Scalar> out;
  out.data = std::move(data);
  out.batch = m.batch;
  out.height = m.height;
  out.width = m.width;
  return out;
}

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace posenorm
