#pragma once

#include "posenorm/datamodel.hpp"
#include "posenorm/model.hpp"
#include "posenorm/optim.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

namespace posenorm {

/// Step decay: the learning rate is multiplied by gamma after every stage.
struct Schedule {
  int epochs_per_stage = 300;
  int stages = 2;
  double gamma = 0.1;
  int validate_every = 20;  ///< epochs; 0 disables model selection

  int total_epochs() const { return epochs_per_stage * stages; }
  double rate(double base, int epoch) const;  ///< epoch is 0-based
};

struct EpisodeSpec {
  int n_way = 20;
  int k_shot = 5;
  int q_query = 15;
};

/// Small-budget adaptation for transfer (new linear classifier) and dynamic
/// (weight generator) learners.
struct FinetuneSpec {
  int epochs = 40;
  double learning_rate = 0.001;
  int batch_size = 16;
};

struct GeneratorSpec {
  int epochs = 200;
  double learning_rate = 0.001;
  int fake_novel = 16;
  int fake_base = 4;
  int images_per_class = 20;
  int shots = 5;
  bool cosine = true;  ///< false: dot-product classifier
};

struct TrainConfig {
  double alpha = 100.0;
  nn::OptimizerSpec optimizer;
  Schedule schedule;
  EpisodeSpec episode;
  int batch_size = 64;                ///< transfer / dynamic base phase
  int episodes_per_epoch = 0;         ///< 0: one pass over the representation set
  double annotation_fraction = 1.0;   ///< share of base images with usable part labels
  int pose_batch_per_class = 0;       ///< extra annotated images per episode class for L_pose
  /// Partial-annotation protocol: attention always from predicted heatmaps and
  /// L_pose only on the extra annotated images (0 per class: fraction table).
  bool predicted_attention = false;
  double pose_batch_scale = 1.0;      ///< multiplies the fraction table (rounded, at least 1)
  int pose_batch = 20;                ///< images per step from the pose set (disjoint protocol)
  FinetuneSpec finetune;
  GeneratorSpec generator;
  int checkpoint_every = 0;           ///< epochs; 0 writes only phase-end checkpoints
  std::uint64_t seed = 0;
};

/// Annotated images per episode class for L_pose under the partial-annotation
/// protocol: 1, 5, 7, 10, 15, 15, 15, 15, 17, 20, 20 at 5%, 10%, 20%, ..., 100%.
int pose_batch_for_fraction(double fraction);

/// L_fewshot + alpha * L_pose. Non-finite inputs abort training.
double total_loss(double few_shot_loss, double pose_loss, double alpha);

/// One row of the metrics log.
struct MetricsRow {
  int epoch = 0;
  std::string split;  ///< train, val, finetune, generator
  double loss_fewshot = std::numeric_limits<double>::quiet_NaN();
  double loss_pose = std::numeric_limits<double>::quiet_NaN();
  double accuracy = std::numeric_limits<double>::quiet_NaN();  ///< percent
};

struct TrainHooks {
  std::function<void(const MetricsRow&)> on_metrics;
  /// Called with a tag such as "epoch-0040" or "base-final".
  std::function<void(const std::string&, Model&)> on_checkpoint;
  /// Runs after each optimizer step; used by audits.
  std::function<void(Model&)> after_step;
};

struct StepStats {
  double loss_fewshot = 0;
  double loss_pose = 0;
  double loss_total = 0;
  double accuracy = 0;  ///< percent over the scored samples
  int pose_images = 0;
};

// ---- classification heads (double precision) ----------------------------

/// Loss and dL/dlogits for softmax cross-entropy; logits are classes x samples.
struct CrossEntropy {
  double loss = 0;
  double accuracy = 0;  ///< percent, argmax with first-index ties
  MatrixD grad;
};
CrossEntropy cross_entropy(const MatrixD& logits, std::span<const int> labels);

/// First maximal index per column.
std::vector<int> argmax_columns(const MatrixD& scores);

/// Per-class mean of labelled feature columns. Errors on an empty class.
MatrixD class_means(const MatrixD& features, std::span<const int> labels, int n_classes);

/// -||q - p_k||^2 for every prototype column k and query column q.
MatrixD proto_logits(const MatrixD& prototypes, const MatrixD& queries);

/// Prototypical loss for an episode laid out as support columns then query
/// columns. Returns the loss statistics and dL/dfeatures for all columns.
struct ProtoResult {
  CrossEntropy ce;
  MatrixD grad_features;
};
ProtoResult proto_loss(const MatrixD& features, std::span<const int> support_labels,
                       std::span<const int> query_labels, int n_way);

/// s * cos(w_k, v) and its gradients.
struct CosineResult {
  MatrixD logits;
  MatrixD grad_weights;   ///< filled by cosine_backward
  MatrixD grad_features;
  double grad_scale = 0;
};
MatrixD cosine_logits(const MatrixD& weights, const MatrixD& features, double scale);
CosineResult cosine_backward(const MatrixD& weights, const MatrixD& features, double scale,
                             const MatrixD& grad_logits);

// ---- training -------------------------------------------------------------

struct BaseData {
  std::vector<SamplePtr> repre;  ///< base-class training images
  std::vector<SamplePtr> val_refer;
  std::vector<SamplePtr> val_query;
};

/// Which base images carry part (or box) supervision in this run.
std::unordered_set<int> annotated_ids(const Model& model, std::span<const SamplePtr> repre,
                                      const TrainConfig& config);

/// Heatmap source per image: ground truth for annotated images during base
/// training (always for pose_gt), predicted otherwise.
std::vector<HeatSource> attention_sources(const Model& model, std::span<const SamplePtr> batch,
                                          const std::unordered_set<int>& annotated,
                                          bool gt_attention = true);

/// One prototypical step on L_fewshot + alpha * L_pose. `annotated` marks
/// images whose labels feed L_pose (and attention when gt_attention is set);
/// pose_extra images only contribute to L_pose.
StepStats proto_train_step(Model& model, const Episode& episode,
                           const std::unordered_set<int>& annotated,
                           std::span<const SamplePtr> pose_extra, nn::Optimizer<float>& optimizer,
                           double alpha, bool gt_attention = true);

/// Episodic base training of a prototypical model (any aggregator).
void proto_train(Model& model, const BaseData& data, const TrainConfig& config,
                 const TrainHooks& hooks = {});

/// Same as proto_train with avg_multitask required.
void multitask_train(Model& model, const BaseData& data, const TrainConfig& config,
                     const TrainHooks& hooks = {});

/// Base phase of the transfer learner: linear classifier over base classes.
void transfer_train(Model& model, const BaseData& data, const TrainConfig& config,
                    const TrainHooks& hooks = {});

/// New linear classifier over novel classes on frozen features.
void transfer_finetune(Model& model, std::span<const SamplePtr> refer, const TrainConfig& config,
                       const TrainHooks& hooks = {});

/// Stage 1 (cosine classifier) then stage 2 (weight generator on frozen features).
void dynamic_train(Model& model, const BaseData& data, const TrainConfig& config,
                   const TrainHooks& hooks = {});

/// Classification episodes from classify_set with predicted attention; L_pose
/// from a separate batch of pose_set per step.
void train_with_disjoint_pose(Model& model, const BaseData& classify, std::span<const SamplePtr> pose_set,
                              const TrainConfig& config, const TrainHooks& hooks = {});

/// Dispatches on the model's algorithm and aggregator.
void train(Model& model, const BaseData& data, const TrainConfig& config,
           const TrainHooks& hooks = {});

// ---- adaptation to new classes -------------------------------------------

/// Scores query features (columns) against classes learned from labelled
/// reference features. Returns n_classes x queries.
MatrixD adapt_and_score(Model& model, const MatrixD& refer_features, std::span<const int> refer_labels,
                        int n_classes, const MatrixD& query_features, const TrainConfig& config,
                        std::uint64_t seed);

/// All-way accuracy on held-out classes using the full reference set; used for
/// model selection.
double validation_accuracy(Model& model, std::span<const SamplePtr> refer,
                           std::span<const SamplePtr> query, const TrainConfig& config);

/// Weights w_k = A * mean_j normalize(s_kj) for each class.
MatrixD generate_weights(const MatrixD& generator, const MatrixD& support, std::span<const int> labels,
                         int n_classes);

}  // namespace posenorm
