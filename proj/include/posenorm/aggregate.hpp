#pragma once

#include "posenorm/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

// Feature aggregators. All functions act on one image: a feature map F stored
// as C x (H*W) (column = location) and, where used, heatmaps as M x (H*W).

namespace posenorm {

/// Attention denominator offset.
inline constexpr double kAttentionEpsilon = 1e-5;

/// Norm below which bilinear L2 normalisation is skipped.
inline constexpr double kBilinearNormFloor = 1e-12;

enum class Layout { avg, pose, bilinear, upn, bbn };

inline Eigen::Index representation_size(Layout layout, Eigen::Index channels, Eigen::Index parts) {
  switch (layout) {
    case Layout::avg: return channels;
    case Layout::pose:
    case Layout::upn: return channels * parts;
    case Layout::bilinear: return channels * channels;
    case Layout::bbn: return 2 * channels;
  }
  return 0;
}

template <typename Scalar>
struct AttentionGrad {
  Matrix<Scalar> features;  ///< dL/dF
  Matrix<Scalar> heatmap;   ///< dL/dm
};

// ---- average pooling -----------------------------------------------------

template <typename Derived>
Vector<typename Derived::Scalar> avg_pool(const Eigen::MatrixBase<Derived>& F) {
  return F.rowwise().mean();
}

template <typename Scalar>
Matrix<Scalar> avg_pool_backward(Eigen::Index locations, const Vector<Scalar>& grad) {
  return grad.replicate(1, locations) / Scalar(locations);
}

// ---- pose normalisation --------------------------------------------------

/// v_i = sum_p F(:,p) m_i(p) / (eps + sum_p m_i(p)), concatenated over parts i.
template <typename DF, typename DM>
Vector<typename DF::Scalar> pose_normalize(const Eigen::MatrixBase<DF>& F,
                                           const Eigen::MatrixBase<DM>& m) {
  using Scalar = typename DF::Scalar;
  require(F.cols() == m.cols(), "pose_normalize: heatmap and feature map sizes differ");
  const Matrix<Scalar> mm = m.template cast<Scalar>();
  const Vector<Scalar> denom = (mm.rowwise().sum().array() + Scalar(kAttentionEpsilon)).matrix();
  Matrix<Scalar> blocks = F * mm.transpose();  // C x M
  blocks.array().rowwise() /= denom.transpose().array();
  return Eigen::Map<const Vector<Scalar>>(blocks.data(), blocks.size());
}

template <typename DF, typename DM>
AttentionGrad<typename DF::Scalar> pose_normalize_backward(const Eigen::MatrixBase<DF>& F,
                                                           const Eigen::MatrixBase<DM>& m,
                                                           const Vector<typename DF::Scalar>& grad) {
  using Scalar = typename DF::Scalar;
  const Eigen::Index C = F.rows(), M = m.rows();
  const Matrix<Scalar> mm = m.template cast<Scalar>();
  const Vector<Scalar> inv = (mm.rowwise().sum().array() + Scalar(kAttentionEpsilon)).inverse().matrix();
  const Eigen::Map<const Matrix<Scalar>> G(grad.data(), C, M);
  Matrix<Scalar> V = F * mm.transpose();
  V.array().rowwise() *= inv.transpose().array();
  AttentionGrad<Scalar> out;
  Matrix<Scalar> Gs = G;
  Gs.array().rowwise() *= inv.transpose().array();  // G diag(1/D)
  out.features = Gs * mm;
  out.heatmap = Gs.transpose() * F;  // (G^T F)_ip / D_i
  const Vector<Scalar> correction = (Gs.array() * V.array()).colwise().sum().transpose();
  out.heatmap.colwise() -= correction;
  return out;
}

// ---- bilinear pooling ----------------------------------------------------

/// Raw second-order statistic B = sum_p F(:,p) F(:,p)^T.
template <typename Derived>
Matrix<typename Derived::Scalar> bilinear_raw(const Eigen::MatrixBase<Derived>& F) {
  return F * F.transpose();
}

/// Flattened B after signed square root and L2 normalisation.
template <typename Derived>
Vector<typename Derived::Scalar> bilinear_pool(const Eigen::MatrixBase<Derived>& F) {
  using Scalar = typename Derived::Scalar;
  const Matrix<Scalar> B = bilinear_raw(F);
  Vector<Scalar> y(B.size());
  for (Eigen::Index i = 0; i < B.size(); ++i) {
    const Scalar b = B.data()[i];
    y[i] = (b > 0 ? Scalar(1) : (b < 0 ? Scalar(-1) : Scalar(0))) * std::sqrt(std::abs(b));
  }
  const Scalar norm = y.norm();
  if (norm >= Scalar(kBilinearNormFloor)) y /= norm;
  return y;
}

template <typename Derived>
Matrix<typename Derived::Scalar> bilinear_pool_backward(
    const Eigen::MatrixBase<Derived>& F, const Vector<typename Derived::Scalar>& grad) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index C = F.rows();
  const Matrix<Scalar> B = bilinear_raw(F);
  Vector<Scalar> y(B.size());
  for (Eigen::Index i = 0; i < B.size(); ++i) {
    const Scalar b = B.data()[i];
    y[i] = (b > 0 ? Scalar(1) : (b < 0 ? Scalar(-1) : Scalar(0))) * std::sqrt(std::abs(b));
  }
  const Scalar norm = y.norm();
  Vector<Scalar> dy = grad;
  if (norm >= Scalar(kBilinearNormFloor)) {
    const Vector<Scalar> z = y / norm;
    dy = (grad - z * z.dot(grad)) / norm;
  }
  Matrix<Scalar> dB(C, C);
  for (Eigen::Index i = 0; i < B.size(); ++i) {
    const Scalar mag = std::max(std::abs(B.data()[i]), Scalar(kBilinearNormFloor));
    dB.data()[i] = dy[i] * Scalar(0.5) / std::sqrt(mag);
  }
  return (dB + dB.transpose()) * F;
}

// ---- unsupervised pose normalisation ------------------------------------

/// M learned, category-agnostic vectors of dimension C (stored C x M).
template <typename Scalar>
struct PoseVectorBank {
  nn::Param<Scalar> vectors;

  PoseVectorBank() = default;
  PoseVectorBank(int channels, int parts) : vectors("upn.bank", channels, parts) {}

  int channels() const { return static_cast<int>(vectors.value.rows()); }
  int parts() const { return static_cast<int>(vectors.value.cols()); }

  void init(std::mt19937_64& rng, double stddev = 1.0) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Eigen::Index i = 0; i < vectors.value.size(); ++i)
      vectors.value.data()[i] = static_cast<Scalar>(normal(rng));
  }
};

/// Soft assignment a_i(p) = softmax_i(-||F(:,p) - bank_i||^2 / temperature).
template <typename Derived>
Matrix<typename Derived::Scalar> upn_assign(const Eigen::MatrixBase<Derived>& F,
                                            const Matrix<typename Derived::Scalar>& bank,
                                            double temperature) {
  using Scalar = typename Derived::Scalar;
  if (!(temperature > 0)) throw std::invalid_argument("upn_pool: temperature must be positive");
  require(bank.rows() == F.rows(), "upn_pool: bank dimensionality does not match feature channels");
  const Vector<Scalar> fnorm = F.colwise().squaredNorm().transpose();
  const Vector<Scalar> bnorm = bank.colwise().squaredNorm().transpose();
  Matrix<Scalar> logits = Scalar(2) * bank.transpose() * F;  // M x P
  logits.colwise() -= bnorm;
  logits.rowwise() -= fnorm.transpose();
  logits /= Scalar(temperature);
  const auto peak = logits.colwise().maxCoeff();
  logits.rowwise() -= peak;
  Matrix<Scalar> a = logits.array().exp().matrix();
  a.array().rowwise() /= a.colwise().sum().array();
  return a;
}

template <typename Derived>
Vector<typename Derived::Scalar> upn_pool(const Eigen::MatrixBase<Derived>& F,
                                          const Matrix<typename Derived::Scalar>& bank,
                                          double temperature) {
  return pose_normalize(F, upn_assign(F, bank, temperature));
}

template <typename Scalar>
struct UpnGrad {
  Matrix<Scalar> features;
  Matrix<Scalar> bank;
};

template <typename Derived>
UpnGrad<typename Derived::Scalar> upn_pool_backward(const Eigen::MatrixBase<Derived>& F,
                                                    const Matrix<typename Derived::Scalar>& bank,
                                                    double temperature,
                                                    const Vector<typename Derived::Scalar>& grad) {
  using Scalar = typename Derived::Scalar;
  const Matrix<Scalar> a = upn_assign(F, bank, temperature);
  AttentionGrad<Scalar> g = pose_normalize_backward(F, a, grad);
  // softmax backward, per location
  const Matrix<Scalar> ad = (a.array() * g.heatmap.array()).matrix();
  Matrix<Scalar> ds = ad;
  ds -= (a.array().rowwise() * ad.colwise().sum().array()).matrix();
  // logits = -D / T, D_ip = ||F_p - b_i||^2
  const Matrix<Scalar> dD = -ds / Scalar(temperature);
  UpnGrad<Scalar> out;
  out.features = g.features;
  out.features += Scalar(2) * (F.derived() * dD.colwise().sum().asDiagonal()) - Scalar(2) * bank * dD;
  out.bank = Scalar(2) * (bank * dD.rowwise().sum().asDiagonal()) - Scalar(2) * F.derived() * dD.transpose();
  return out;
}

}  // namespace posenorm
