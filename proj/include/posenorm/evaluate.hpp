#pragma once

#include "posenorm/learners.hpp"
#include "posenorm/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace posenorm {

/// Reference images per class used for adaptation; 0 means all of them.
inline constexpr int kAllShots = 0;

std::string shots_name(int shots);  ///< "1", "5", "all"
int shots_from_string(const std::string& name);

struct EvalReport {
  double mean_accuracy = 0;                   ///< percent over all query samples
  double mean_per_class_accuracy = 0;         ///< percent, mean of per_class_accuracy
  std::map<int, double> per_class_accuracy;   ///< class id -> percent
  double ci95 = 0;                            ///< half-width, percentage points
  int n_trials = 0;
  int shots = kAllShots;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string algorithm;
  std::string aggregator;
  int num_classes = 0;
  int num_queries = 0;
  std::vector<double> trial_accuracies;
};

inline constexpr const char* kEvalReportSchema = "posenorm.eval_report";
inline constexpr int kEvalReportVersion = 1;

void write_eval_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport read_eval_report(const std::filesystem::path& path);

/// Representations of a labelled sample set.
struct FeatureSet {
  MatrixD features;  ///< d x N
  std::vector<int> classes;
  std::vector<SamplePtr> samples;
};

FeatureSet embed_set(Model& model, std::span<const SamplePtr> samples);

/// Mean and 1.96 * sample std / sqrt(n); the half-width is 0 for n < 2.
std::pair<double, double> mean_ci95(std::span<const double> values);

/// All-way evaluation over every class present in `refer`. For shots 1 or 5,
/// each trial samples that many reference images per class; for kAllShots each
/// trial uses the full reference set (trials then differ only in the
/// adaptation seed of transfer learners).
EvalReport evaluate_allway(Model& model, std::span<const SamplePtr> refer,
                           std::span<const SamplePtr> query, int shots, int n_trials,
                           std::uint64_t seed, const TrainConfig& config);

EvalReport evaluate_features(Model& model, const FeatureSet& refer, const FeatureSet& query, int shots,
                             int n_trials, std::uint64_t seed, const TrainConfig& config);

/// Mean and CI across independent reports (for example separate training runs).
EvalReport combine_runs(std::span<const EvalReport> runs);

/// Accuracy drop of class_id (percentage points) when part i's block is zeroed
/// in every reference and query representation. Requires a part layout.
std::vector<double> part_importance(Model& model, std::span<const SamplePtr> refer,
                                    std::span<const SamplePtr> query, int class_id,
                                    const TrainConfig& config, std::uint64_t seed = 0);

/// Drops for every query class, from one pair of embeddings.
std::map<int, std::vector<double>> part_importance_table(Model& model, std::span<const SamplePtr> refer,
                                                         std::span<const SamplePtr> query,
                                                         const TrainConfig& config, std::uint64_t seed = 0);

std::map<int, std::vector<double>> part_importance_table(Model& model, const FeatureSet& refer,
                                                         const FeatureSet& query, const TrainConfig& config,
                                                         std::uint64_t seed = 0);

/// Zeroes rows [part * block, (part + 1) * block) of every column.
MatrixD zero_part_block(const MatrixD& features, int part, Eigen::Index block);

void write_part_importance(const std::filesystem::path& path,
                           const std::map<int, std::vector<double>>& table);

struct Neighbor {
  SamplePtr sample;
  double similarity = 0;
  bool same_class = false;
};

/// Top-k reference samples by cosine similarity of the part_index block.
std::vector<Neighbor> nearest_part_neighbors(Model& model, const SamplePtr& query_sample, int part_index,
                                             std::span<const SamplePtr> refer, int k = 5);

std::vector<Neighbor> rank_part_neighbors(const Vector<double>& query, const FeatureSet& refer, int query_class,
                                          int part_index, Eigen::Index block, int k);

}  // namespace posenorm
