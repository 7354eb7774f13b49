#pragma once

#include "posenorm/datamodel.hpp"
#include "posenorm/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

namespace posenorm {

/// Probabilities are clamped to [kLossClamp, 1 - kLossClamp] before the log.
inline constexpr double kLossClamp = 1e-7;

struct PoseHeadConfig {
  int in_channels = 64;
  int hidden_channels = 30;
  int num_parts = 15;
  int in_size = 21;   ///< tap resolution H' (= W')
  int out_size = 10;  ///< final feature-map resolution H (= W)
};

/// Conv-BN-ReLU-Conv with a sigmoid output. When the tap and the final map
/// differ in resolution, the hidden activation is bilinearly resized before
/// the second convolution.
template <typename Scalar>
class PoseHead {
 public:
  explicit PoseHead(const PoseHeadConfig& config)
      : config_(config),
        conv1_("pose.conv1", config.in_channels, config.hidden_channels, 3, 1, 1),
        bn1_("pose.bn1", config.hidden_channels),
        conv2_("pose.conv2", config.hidden_channels, config.num_parts, 3, 1, 1, true) {
    if (config.in_size != config.out_size)
      resize_.emplace(config.in_size, config.in_size, config.out_size, config.out_size);
  }

  const PoseHeadConfig& config() const { return config_; }
  bool frozen() const { return frozen_; }

  void init(std::mt19937_64& rng) {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
  }

  nn::ParamList<Scalar> params() {
    nn::ParamList<Scalar> out;
    conv1_.collect(out);
    bn1_.collect(out);
    conv2_.collect(out);
    return out;
  }

  nn::Conv2d<Scalar>& output_conv() { return conv2_; }

  /// Marks every parameter (and the batch-norm statistics) immutable.
  void freeze() {
    frozen_ = true;
    for (auto* p : params()) p->frozen = true;
  }

  /// Heatmaps m = q(F') of shape M x H x W per image, entries in (0,1).
  MapBatch<Scalar> forward(const MapBatch<Scalar>& tap, bool train) {
    if (tap.channels() != config_.in_channels)
      throw std::invalid_argument("pose head: expected " + std::to_string(config_.in_channels) +
                                  " input channels, got " + std::to_string(tap.channels()));
    MapBatch<Scalar> h = relu1_.forward(bn1_.forward(conv1_.forward(tap, train), train), train);
    if (resize_) h = resize_->forward(h, train);
    return sigmoid_.forward(conv2_.forward(h, train), train);
  }

  /// grad_heatmap is dL/dm; grad_logits (optional) is added to dL/dz behind
  /// the sigmoid, which is how the pose loss enters without saturating.
  MapBatch<Scalar> backward(const MapBatch<Scalar>& grad_heatmap,
                            const MapBatch<Scalar>* grad_logits = nullptr) {
    MapBatch<Scalar> g = sigmoid_.backward(grad_heatmap);
    if (grad_logits) g.data += grad_logits->data;
    g = conv2_.backward(g);
    if (resize_) g = resize_->backward(g);
    return conv1_.backward(bn1_.backward(relu1_.backward(g)));
  }

 private:
  PoseHeadConfig config_;
  nn::Conv2d<Scalar> conv1_;
  nn::BatchNorm2d<Scalar> bn1_;
  nn::ReLU<Scalar> relu1_;
  std::optional<nn::BilinearResize<Scalar>> resize_;
  nn::Conv2d<Scalar> conv2_;
  nn::Sigmoid<Scalar> sigmoid_;
  bool frozen_ = false;
};

/// Mean pixel-wise binary log loss over all M*H*W entries.
template <typename DerivedP, typename DerivedT>
typename DerivedP::Scalar pose_loss(const Eigen::MatrixBase<DerivedP>& pred,
                                    const Eigen::MatrixBase<DerivedT>& target) {
  using Scalar = typename DerivedP::Scalar;
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          "pose_loss: prediction and target shapes differ");
  require(pred.size() > 0, "pose_loss: empty heatmap");
  const Scalar lo = Scalar(kLossClamp), hi = Scalar(1) - Scalar(kLossClamp);
  const auto p = pred.derived().array().max(lo).min(hi);
  const auto t = target.derived().template cast<Scalar>().array();
  return -(t * p.log() + (Scalar(1) - t) * (Scalar(1) - p).log()).sum() / Scalar(pred.size());
}

/// dL/dpred of pose_loss, evaluated at the clamped prediction.
template <typename DerivedP, typename DerivedT>
Matrix<typename DerivedP::Scalar> pose_loss_grad(const Eigen::MatrixBase<DerivedP>& pred,
                                                 const Eigen::MatrixBase<DerivedT>& target) {
  using Scalar = typename DerivedP::Scalar;
  const Scalar lo = Scalar(kLossClamp), hi = Scalar(1) - Scalar(kLossClamp);
  const auto p = pred.derived().array().max(lo).min(hi);
  const auto t = target.derived().template cast<Scalar>().array();
  return (-(t / p - (Scalar(1) - t) / (Scalar(1) - p)) / Scalar(pred.size())).matrix();
}

inline double pose_loss(const PartHeatmap& pred, const PartHeatmap& target) {
  require(pred.height == target.height && pred.width == target.width,
          "pose_loss: heatmap resolutions differ");
  return pose_loss(pred.values.cast<double>(), target.values.cast<double>());
}

/// Argmax cell (first in row-major order on ties) mapped to its centre in
/// image pixels, one entry per part.
std::vector<std::pair<double, double>> heatmap_peaks(const PartHeatmap& heatmap, int image_h,
                                                     int image_w);

struct PckCounts {
  int correct = 0;
  int visible = 0;
  double fraction() const { return visible ? double(correct) / visible : 0.0; }
};

/// Correct parts at threshold tau (fraction of the bbox diagonal) for one
/// image. Throws if the sample has no bbox or no visible part.
PckCounts pck_counts(const PartHeatmap& pred, const ImageSample& sample, double tau);

double pck(const PartHeatmap& pred, const ImageSample& sample, double tau);

struct PckPoint {
  double threshold = 0;
  double accuracy = 0;
};

/// Pooled PCK over many images for each threshold.
std::vector<PckPoint> pck_curve(const std::vector<PartHeatmap>& preds,
                                const std::vector<SamplePtr>& samples,
                                const std::vector<double>& thresholds);

/// Thresholds 0.05, 0.10, ..., 0.50.
std::vector<double> default_pck_thresholds();

void write_pck_table(const std::filesystem::path& path, const std::vector<PckPoint>& curve);
std::vector<PckPoint> read_pck_table(const std::filesystem::path& path);

}  // namespace posenorm
