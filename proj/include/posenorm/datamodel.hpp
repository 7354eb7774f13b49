#pragma once

#include "posenorm/tensor.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

namespace posenorm {

/// RGB image in [0,1]; column h*width + w holds the pixel at (h, w).
struct Image {
  int height = 0;
  int width = 0;
  Eigen::Matrix<float, 3, Eigen::Dynamic> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(3, Eigen::Index(h) * w) { pixels.setZero(); }

  auto at(int row, int col) { return pixels.col(Eigen::Index(row) * width + col); }
  auto at(int row, int col) const { return pixels.col(Eigen::Index(row) * width + col); }
};

/// Pixel coordinates; (0,0) is the top-left corner of the image.
struct Keypoint {
  double x = 0;
  double y = 0;
  bool visible = false;
};

struct BoundingBox {
  double x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double diagonal() const;
};

struct ImageSample {
  int id = 0;  // unique within a dataset
  Image image;
  int class_id = 0;
  std::optional<std::vector<Keypoint>> keypoints;
  std::optional<BoundingBox> bbox;
};

using SamplePtr = std::shared_ptr<const ImageSample>;

/// Throws std::invalid_argument if a visible keypoint or the bbox falls outside
/// the image, or the bbox is degenerate.
void validate(const ImageSample& sample);

struct SplitAssignment {
  std::set<int> base;
  std::set<int> validation;
  std::set<int> novel;
};

struct DatasetBundle {
  std::vector<SamplePtr> repre;
  std::vector<SamplePtr> refer;
  std::vector<SamplePtr> query;
  int num_parts = 0;
  SplitAssignment split;

  /// Reference / query samples restricted to a class set.
  std::vector<SamplePtr> refer_of(const std::set<int>& classes) const;
  std::vector<SamplePtr> query_of(const std::set<int>& classes) const;
};

enum class HeatmapKind { ground_truth, predicted };

/// M x (H*W) location evidence; row i is part i, column h*W + w.
struct PartHeatmap {
  MatrixF values;
  int height = 0;
  int width = 0;
  HeatmapKind kind = HeatmapKind::ground_truth;

  int num_parts() const { return static_cast<int>(values.rows()); }
};

struct LabeledSample {
  SamplePtr sample;
  int label = 0;  // episode-local class index in 0..n_way-1
};

struct Episode {
  std::vector<LabeledSample> support;
  std::vector<LabeledSample> query;
  std::vector<int> class_ids;  // episode index -> dataset class id
  int n_way = 0;
  int k_shot = 0;
  int q_query = 0;
};

/// id mod 2 == 0 -> base; id mod 4 == 1 -> validation; otherwise novel.
SplitAssignment split_classes(std::span<const int> class_ids);

std::map<int, std::vector<SamplePtr>> group_by_class(std::span<const SamplePtr> samples);

/// Per class, ceil(fraction * n) (at least 1) samples go to the reference split.
std::pair<std::vector<SamplePtr>, std::vector<SamplePtr>> make_reference_query(
    const std::map<int, std::vector<SamplePtr>>& samples_by_class, double fraction,
    std::uint64_t seed);

/// Binary one-hot per visible part at the floor-scaled grid cell.
PartHeatmap rasterize_parts(const ImageSample& sample, int grid_h, int grid_w);

/// Two channels: foreground (cell centre inside the scaled box) and background.
PartHeatmap rasterize_bbox(const ImageSample& sample, int grid_h, int grid_w);

/// Grid cell containing an image-space point, clamped to the grid.
std::pair<int, int> scale_to_cell(double x, double y, int image_h, int image_w, int grid_h,
                                  int grid_w);

Episode sample_episode(std::span<const SamplePtr> pool, int n_way, int k_shot, int q_query,
                       std::uint64_t seed);

/// Ids of the ceil(fraction * n) samples per class that carry usable part
/// annotations for a training run. Fixed once per run.
std::unordered_set<int> designate_annotated(std::span<const SamplePtr> pool, double fraction,
                                            std::uint64_t seed);

}  // namespace posenorm
