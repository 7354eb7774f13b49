#pragma once

#include "posenorm/aggregate.hpp"
#include "posenorm/backbone.hpp"
#include "posenorm/datamodel.hpp"
#include "posenorm/posehead.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace posenorm {

enum class Algorithm { transfer, proto, dynamic };

enum class Aggregator { avg, pose, pose_gt, bilinear, upn, bbn, avg_multitask };

std::string to_string(Algorithm a);
std::string to_string(Aggregator a);
Algorithm algorithm_from_string(const std::string& name);
Aggregator aggregator_from_string(const std::string& name);

/// Architecture-level description; everything needed to rebuild a model.
struct ModelSpec {
  BackboneConfig backbone;
  Algorithm algorithm = Algorithm::proto;
  Aggregator aggregator = Aggregator::avg;
  int num_parts = 15;  ///< annotated parts M (bbn always uses 2 channels)
  int upn_parts = 15;
  double upn_temperature = 1.0;
  std::vector<int> base_classes;  ///< classifier rows for transfer / dynamic
};

/// Which heatmap drives attention for one image.
enum class HeatSource { none, ground_truth, predicted };

/// Cached state of one training forward pass.
struct BatchForward {
  MatrixF features;  ///< d x N
  std::vector<HeatSource> sources;
  std::vector<bool> pose_supervised;
  MapBatch<float> final_maps;
  MapBatch<float> predicted;  ///< empty without a pose head
  MapBatch<float> attention;  ///< heatmaps actually used for pooling
  MapBatch<float> targets;    ///< pose targets (rows valid for supervised images)
  double pose_loss = 0;
  int pose_images = 0;
};

/// f_theta + q_phi + g_phi + the learner-specific heads h_w.
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t init_seed);

  const ModelSpec& spec() const { return spec_; }
  Backbone<float>& backbone() { return *backbone_; }
  bool has_pose_head() const { return pose_head_.has_value(); }
  PoseHead<float>& pose_head();
  PoseVectorBank<float>* bank() { return bank_ ? &*bank_ : nullptr; }

  Layout layout() const;
  int attention_parts() const;  ///< M of the representation blocks (0 for avg / bilinear)
  Eigen::Index feature_dim() const;
  int grid() const { return backbone_->out_size(); }

  // Learner parameters.
  nn::Param<float> classifier_weight;  ///< base classes x d
  nn::Param<float> classifier_bias;    ///< base classes x 1 (linear classifier only)
  nn::Param<float> cosine_scale;       ///< 1 x 1
  nn::Param<float> generator;          ///< d x d
  nn::Param<float> novel_weight;       ///< novel classes x d (after adaptation)
  nn::Param<float> novel_bias;
  std::vector<int> novel_classes;

  bool base_trained = false;

  nn::ParamList<float> feature_params();  ///< theta and uPN bank
  nn::ParamList<float> pose_params();
  nn::ParamList<float> all_params();

  /// Marks the end of base training: freezes q_phi.
  void finish_base_training();
  /// Freezes theta (and the uPN bank) for adaptation phases.
  void freeze_features();
  bool features_frozen() const { return features_frozen_; }

  /// Training-mode forward over a batch. `sources` selects ground-truth or
  /// predicted attention per image; `pose_supervised` marks images whose
  /// pose loss is computed.
  BatchForward forward(std::span<const SamplePtr> batch, const std::vector<HeatSource>& sources,
                       const std::vector<bool>& pose_supervised, bool train);

  /// Accumulates parameter gradients of L_fewshot + alpha * L_pose, given
  /// dL_fewshot/dv. Must follow the matching forward call.
  void backward(const BatchForward& fwd, const MatrixF& grad_features, double alpha);

  /// Inference representations (eval mode): predicted heatmaps for pose/bbn,
  /// ground truth for pose_gt.
  MatrixF embed(std::span<const SamplePtr> samples);

  /// Eval-mode heatmaps for samples (pose head required).
  std::vector<PartHeatmap> predict_heatmaps(std::span<const SamplePtr> samples);

  /// Ground-truth attention target for one sample at the feature resolution.
  MatrixF ground_truth_map(const ImageSample& sample) const;

  /// Snapshot / restore of every parameter value.
  std::vector<MatrixF> snapshot();
  void restore(const std::vector<MatrixF>& values);

 private:
  MapBatch<float> stack_images(std::span<const SamplePtr> batch) const;

  ModelSpec spec_;
  std::unique_ptr<Backbone<float>> backbone_;
  std::optional<PoseHead<float>> pose_head_;
  std::optional<PoseVectorBank<float>> bank_;
  bool features_frozen_ = false;
};

/// Pose-head configuration paired with a backbone (64->30->M for ConvNet4,
/// 256->64->M for ResNet18-mod).
PoseHeadConfig pose_head_config(const Backbone<float>& backbone, int num_parts);

}  // namespace posenorm
