#include "posenorm/posehead.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace posenorm {

std::vector<std::pair<double, double>> heatmap_peaks(const PartHeatmap& heatmap, int image_h,
                                                     int image_w) {
  std::vector<std::pair<double, double>> peaks;
  const double sx = double(image_w) / heatmap.width, sy = double(image_h) / heatmap.height;
  for (int i = 0; i < heatmap.num_parts(); ++i) {
    Eigen::Index best = 0;
    float best_value = heatmap.values(i, 0);
    for (Eigen::Index j = 1; j < heatmap.values.cols(); ++j)
      if (heatmap.values(i, j) > best_value) {
        best_value = heatmap.values(i, j);
        best = j;
      }
    const auto row = best / heatmap.width, col = best % heatmap.width;
    peaks.emplace_back((double(col) + 0.5) * sx, (double(row) + 0.5) * sy);
  }
  return peaks;
}

PckCounts pck_counts(const PartHeatmap& pred, const ImageSample& sample, double tau) {
  if (!sample.bbox) throw std::invalid_argument("pck: sample has no bounding box");
  if (!sample.keypoints) throw std::invalid_argument("pck: sample has no keypoints");
  const auto& kps = *sample.keypoints;
  require(static_cast<int>(kps.size()) == pred.num_parts(),
          "pck: heatmap part count does not match keypoints");
  const auto peaks = heatmap_peaks(pred, sample.image.height, sample.image.width);
  const double limit = tau * sample.bbox->diagonal();
  PckCounts counts;
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (!kps[i].visible) continue;
    ++counts.visible;
    if (std::hypot(peaks[i].first - kps[i].x, peaks[i].second - kps[i].y) <= limit)
      ++counts.correct;
  }
  if (counts.visible == 0)
    throw std::invalid_argument("pck: sample " + std::to_string(sample.id) + " has no visible parts");
  return counts;
}

double pck(const PartHeatmap& pred, const ImageSample& sample, double tau) {
  return pck_counts(pred, sample, tau).fraction();
}

std::vector<PckPoint> pck_curve(const std::vector<PartHeatmap>& preds,
                                const std::vector<SamplePtr>& samples,
                                const std::vector<double>& thresholds) {
  require(preds.size() == samples.size(), "pck_curve: prediction/sample count mismatch");
  std::vector<PckPoint> curve;
  for (double tau : thresholds) {
    PckCounts total;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const PckCounts c = pck_counts(preds[i], *samples[i], tau);
      total.correct += c.correct;
      total.visible += c.visible;
    }
    curve.push_back({tau, total.fraction()});
  }
  return curve;
}

std::vector<double> default_pck_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 10; ++i) t.push_back(0.05 * i);
  return t;
}

void write_pck_table(const std::filesystem::path& path, const std::vector<PckPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "threshold,accuracy\n" << std::setprecision(17);
  for (const auto& p : curve) out << p.threshold << "," << p.accuracy << "\n";
}

std::vector<PckPoint> read_pck_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "threshold,accuracy") throw std::runtime_error(path.string() + ": bad header");
  std::vector<PckPoint> curve;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    PckPoint p;
    char comma = 0;
    std::istringstream row(line);
    if (!(row >> p.threshold >> comma >> p.accuracy) || comma != ',')
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    curve.push_back(p);
  }
  return curve;
}

}  // namespace posenorm
