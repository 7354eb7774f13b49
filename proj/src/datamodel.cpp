#include "posenorm/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace posenorm {

double BoundingBox::diagonal() const { return std::hypot(width(), height()); }

void validate(const ImageSample& sample) {
  const double w = sample.image.width, h = sample.image.height;
  if (sample.keypoints) {
    for (std::size_t i = 0; i < sample.keypoints->size(); ++i) {
      const Keypoint& k = (*sample.keypoints)[i];
      if (k.visible && (k.x < 0 || k.y < 0 || k.x > w || k.y > h)) {
        std::ostringstream msg;
        msg << "sample " << sample.id << ": visible keypoint " << i + 1 << " at (" << k.x
            << ", " << k.y << ") lies outside the " << w << "x" << h << " image";
        throw std::invalid_argument(msg.str());
      }
    }
  }
  if (sample.bbox) {
    const BoundingBox& b = *sample.bbox;
    if (b.width() <= 0 || b.height() <= 0)
      throw std::invalid_argument("sample " + std::to_string(sample.id) +
                                  ": bounding box has non-positive extent");
    if (b.x_min < 0 || b.y_min < 0 || b.x_max > w || b.y_max > h)
      throw std::invalid_argument("sample " + std::to_string(sample.id) +
                                  ": bounding box exceeds image bounds");
  }
}

namespace {

std::vector<SamplePtr> filter_classes(const std::vector<SamplePtr>& samples,
                                      const std::set<int>& classes) {
  std::vector<SamplePtr> out;
  for (const auto& s : samples)
    if (classes.count(s->class_id)) out.push_back(s);
  return out;
}

}  // namespace

std::vector<SamplePtr> DatasetBundle::refer_of(const std::set<int>& classes) const {
  return filter_classes(refer, classes);
}

std::vector<SamplePtr> DatasetBundle::query_of(const std::set<int>& classes) const {
  return filter_classes(query, classes);
}

SplitAssignment split_classes(std::span<const int> class_ids) {
  require(!class_ids.empty(), "split_classes: empty class list");
  SplitAssignment split;
  std::set<int> seen;
  for (int id : class_ids) {
    require(id >= 0, "split_classes: negative class id " + std::to_string(id));
    if (!seen.insert(id).second)
      throw std::invalid_argument("split_classes: duplicate class id " + std::to_string(id));
    if (id % 2 == 0)
      split.base.insert(id);
    else if (id % 4 == 1)
      split.validation.insert(id);
    else
      split.novel.insert(id);
  }
  return split;
}

std::map<int, std::vector<SamplePtr>> group_by_class(std::span<const SamplePtr> samples) {
  std::map<int, std::vector<SamplePtr>> out;
  for (const auto& s : samples) out[s->class_id].push_back(s);
  return out;
}

std::pair<std::vector<SamplePtr>, std::vector<SamplePtr>> make_reference_query(
    const std::map<int, std::vector<SamplePtr>>& samples_by_class, double fraction,
    std::uint64_t seed) {
  require(fraction > 0 && fraction < 1, "make_reference_query: fraction must be in (0,1)");
  std::vector<SamplePtr> refer, query;
  std::mt19937_64 rng(seed);
  for (const auto& [cls, samples] : samples_by_class) {
    if (samples.size() < 2)
      throw std::invalid_argument("make_reference_query: class " + std::to_string(cls) +
                                  " has " + std::to_string(samples.size()) +
                                  " sample(s); need at least 2");
    std::vector<SamplePtr> order = samples;
    std::shuffle(order.begin(), order.end(), rng);
    const auto n = order.size();
    auto n_ref = static_cast<std::size_t>(std::ceil(fraction * double(n) - 1e-9));
    n_ref = std::clamp<std::size_t>(n_ref, 1, n - 1);
    refer.insert(refer.end(), order.begin(), order.begin() + n_ref);
    query.insert(query.end(), order.begin() + n_ref, order.end());
  }
  return {std::move(refer), std::move(query)};
}

std::pair<int, int> scale_to_cell(double x, double y, int image_h, int image_w, int grid_h,
                                  int grid_w) {
  const int row = std::clamp(static_cast<int>(std::floor(y * grid_h / image_h)), 0, grid_h - 1);
  const int col = std::clamp(static_cast<int>(std::floor(x * grid_w / image_w)), 0, grid_w - 1);
  return {row, col};
}

PartHeatmap rasterize_parts(const ImageSample& sample, int grid_h, int grid_w) {
  require(grid_h > 0 && grid_w > 0, "rasterize_parts: grid must be non-empty");
  if (!sample.keypoints)
    throw std::invalid_argument("rasterize_parts: sample " + std::to_string(sample.id) +
                                " has no keypoints");
  validate(sample);
  const auto& kps = *sample.keypoints;
  PartHeatmap map;
  map.height = grid_h;
  map.width = grid_w;
  map.kind = HeatmapKind::ground_truth;
  map.values = MatrixF::Zero(static_cast<Eigen::Index>(kps.size()), Eigen::Index(grid_h) * grid_w);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (!kps[i].visible) continue;
    const auto [row, col] = scale_to_cell(kps[i].x, kps[i].y, sample.image.height,
                                          sample.image.width, grid_h, grid_w);
    map.values(static_cast<Eigen::Index>(i), Eigen::Index(row) * grid_w + col) = 1.0f;
  }
  return map;
}

PartHeatmap rasterize_bbox(const ImageSample& sample, int grid_h, int grid_w) {
  require(grid_h > 0 && grid_w > 0, "rasterize_bbox: grid must be non-empty");
  if (!sample.bbox)
    throw std::invalid_argument("rasterize_bbox: sample " + std::to_string(sample.id) +
                                " has no bounding box");
  validate(sample);
  const BoundingBox& b = *sample.bbox;
  const double sy = double(sample.image.height) / grid_h;
  const double sx = double(sample.image.width) / grid_w;
  PartHeatmap map;
  map.height = grid_h;
  map.width = grid_w;
  map.kind = HeatmapKind::ground_truth;
  map.values = MatrixF::Zero(2, Eigen::Index(grid_h) * grid_w);
  bool any = false;
  for (int r = 0; r < grid_h; ++r) {
    const double cy = (r + 0.5) * sy;
    for (int c = 0; c < grid_w; ++c) {
      const double cx = (c + 0.5) * sx;
      if (cx >= b.x_min && cx <= b.x_max && cy >= b.y_min && cy <= b.y_max) {
        map.values(0, Eigen::Index(r) * grid_w + c) = 1.0f;
        any = true;
      }
    }
  }
  // A box smaller than one cell still marks the cell holding its centre.
  if (!any) {
    const auto [row, col] =
        scale_to_cell(0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max),
                      sample.image.height, sample.image.width, grid_h, grid_w);
    map.values(0, Eigen::Index(row) * grid_w + col) = 1.0f;
  }
  map.values.row(1) = (1.0f - map.values.row(0).array()).matrix();
  return map;
}

Episode sample_episode(std::span<const SamplePtr> pool, int n_way, int k_shot, int q_query,
                       std::uint64_t seed) {
  require(n_way > 0 && k_shot > 0 && q_query > 0,
          "sample_episode: n_way, k_shot and q_query must be positive");
  const auto by_class = group_by_class(pool);
  const auto needed = static_cast<std::size_t>(k_shot + q_query);
  std::vector<int> eligible;
  std::vector<int> deficient;
  for (const auto& [cls, samples] : by_class)
    (samples.size() >= needed ? eligible : deficient).push_back(cls);
  if (static_cast<int>(eligible.size()) < n_way) {
    std::ostringstream msg;
    msg << "sample_episode: need " << n_way << " classes with >= " << needed
        << " samples, found " << eligible.size();
    if (!deficient.empty()) {
      msg << "; deficient classes:";
      for (int cls : deficient) msg << " " << cls << " (" << by_class.at(cls).size() << ")";
    }
    throw std::invalid_argument(msg.str());
  }
  std::mt19937_64 rng(seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.q_query = q_query;
  for (int label = 0; label < n_way; ++label) {
    const int cls = eligible[label];
    ep.class_ids.push_back(cls);
    std::vector<SamplePtr> order = by_class.at(cls);
    std::shuffle(order.begin(), order.end(), rng);
    for (int i = 0; i < k_shot; ++i) ep.support.push_back({order[i], label});
    for (int i = 0; i < q_query; ++i) ep.query.push_back({order[k_shot + i], label});
  }
  return ep;
}

std::unordered_set<int> designate_annotated(std::span<const SamplePtr> pool, double fraction,
                                            std::uint64_t seed) {
  require(fraction > 0 && fraction <= 1, "designate_annotated: fraction must be in (0,1]");
  std::unordered_set<int> ids;
  std::mt19937_64 rng(seed);
  for (const auto& [cls, samples] : group_by_class(pool)) {
    std::vector<SamplePtr> order = samples;
    std::shuffle(order.begin(), order.end(), rng);
    auto n = static_cast<std::size_t>(std::ceil(fraction * double(order.size()) - 1e-9));
    n = std::clamp<std::size_t>(n, 1, order.size());
    for (std::size_t i = 0; i < n; ++i) ids.insert(order[i]->id);
  }
  return ids;
}

}  // namespace posenorm
