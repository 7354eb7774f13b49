#pragma once

#include "posenorm/config.hpp"
#include "posenorm/evaluate.hpp"
#include "posenorm/learners.hpp"
#include "posenorm/posehead.hpp"

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace posenorm {

/// Dataset named by the config: generated from data.synthetic (seeded by the
/// run seed) or read from data.root, then split and partitioned.
DatasetBundle load_bundle(const RunConfig& config);

/// Pose-annotated images from data.pose_root (disjoint supervision); empty
/// when no pose root is configured.
std::vector<SamplePtr> load_pose_set(const RunConfig& config);

/// Model spec with base classes and part count taken from the data.
ModelSpec resolved_spec(const RunConfig& config, const DatasetBundle& bundle);

/// Metrics log, `epoch,split,loss_fewshot,loss_pose,accuracy`; missing values are empty cells.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const MetricsRow& row);

 private:
  std::filesystem::path path_;
};

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

struct TrainOutcome {
  std::unique_ptr<Model> model;
  std::vector<MetricsRow> metrics;
};

/// Base training (and generator training for dynamic learners). With an
/// out_dir, writes resolved_config.json, metrics.csv and checkpoints/<tag>.ckpt.
TrainOutcome train_run(const RunConfig& config, const DatasetBundle& bundle,
                       const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// One all-way report per configured shot setting on the novel classes. With
/// more than one all-shot pass, the passes reuse the trial machinery.
std::vector<EvalReport> eval_run(const RunConfig& config, Model& model, const DatasetBundle& bundle);

/// Reports written as reports/eval_<shots>.json under out_dir.
void write_reports(const std::filesystem::path& out_dir, const std::vector<EvalReport>& reports);

/// PCK over the novel query images.
std::vector<PckPoint> pck_run(const RunConfig& config, Model& model, const DatasetBundle& bundle);

/// Sweep point: fraction plus its all-shot report.
struct SweepPoint {
  double fraction = 0;
  EvalReport report;
};

/// Partial-annotation grid. Each point trains with predicted attention and
/// the per-class pose batch of its fraction; reports go to
/// out_dir/fraction_<f>/ and the curve to out_dir/fraction_curve.{csv,png}.
std::vector<SweepPoint> sweep_run(const RunConfig& config, const DatasetBundle& bundle,
                                  const std::filesystem::path& out_dir,
                                  const std::optional<EvalReport>& baseline = std::nullopt);

/// Config for one sweep point.
RunConfig sweep_point_config(const RunConfig& config, double fraction);

/// Resolved config snapshot next to a run's outputs.
void write_resolved_config(const std::filesystem::path& out_dir, const RunConfig& config);

}  // namespace posenorm
