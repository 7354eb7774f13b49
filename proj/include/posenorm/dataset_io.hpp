#pragma once

#include "posenorm/datamodel.hpp"

#include <filesystem>
#include <vector>

namespace posenorm {

// Binary PPM (P6) and, through libjpeg, baseline JPEG.
Image read_image(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Bilinear resize (half-pixel centres).
Image resize_image(const Image& image, int height, int width);

/// Rescales image, keypoints and box to a square side x side input.
ImageSample resize_sample(const ImageSample& sample, int side);

/// On-disk dataset layout, relative to a root directory:
///   images.txt   `<relative_path> <class_id>`, line i is image_index i (1-based)
///   parts.txt    `<image_index> <part_id> <x> <y> <visible{0,1}>`, part_id in 1..M
///   bboxes.txt   `<image_index> <x_min> <y_min> <width> <height>`
///   dataset.json `{"num_parts": M}` (optional; otherwise M = max part_id)
/// parts.txt and bboxes.txt are optional.
struct LoadedDataset {
  std::vector<SamplePtr> samples;
  int num_parts = 0;
};

LoadedDataset load_dataset(const std::filesystem::path& root, int input_size);

void write_dataset(const std::filesystem::path& root, const std::vector<SamplePtr>& samples,
                   int num_parts);

}  // namespace posenorm
