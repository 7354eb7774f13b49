#pragma once

#include "posenorm/datamodel.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace posenorm {

/// How class identities are assigned to part attributes.
enum class ClassDesign {
  random,       ///< every part's attribute drawn per class; classes differ in >= 2 parts
  single_part,  ///< shared template; class c alters only part (c mod M)
  permutation,  ///< one shared colour set; classes differ only in which part wears which colour
};

struct SyntheticConfig {
  int num_classes = 40;
  int images_per_class = 30;
  int num_parts = 5;
  int image_size = 84;
  double clutter = 0.5;  ///< background clutter level in [0, 1]
  int distractors = 6;   ///< unoutlined part-like shapes in random palette colours
  double outline = 1.5;  ///< dark rim width drawn around real parts, pixels
  double part_radius = 6.5;
  double min_part_distance = 17.0;  ///< between part centres, pixels
  double missing_part_probability = 0.0;
  int placement_retries = 500;
  int num_colors = 6;
  int num_textures = 2;
  ClassDesign design = ClassDesign::random;
  double reference_fraction = 0.2;
};

struct PartAttribute {
  int color = 0;
  int texture = 0;
  bool operator==(const PartAttribute&) const = default;
};

using ClassAttributes = std::vector<PartAttribute>;

struct SceneLayout {
  std::vector<double> x, y;  ///< part centres, pixels
  std::vector<bool> present;
  std::uint64_t texture_seed = 0;
};

/// Per-class attribute tables; class c of the result is class id c.
std::vector<ClassAttributes> make_class_attributes(const SyntheticConfig& config,
                                                   std::uint64_t seed);

/// Non-overlapping part placement. Throws std::runtime_error when the retry
/// budget is exhausted.
SceneLayout sample_layout(const SyntheticConfig& config, std::mt19937_64& rng);

ImageSample render_sample(const SyntheticConfig& config, const ClassAttributes& attributes,
                          const SceneLayout& layout, int class_id, int id);

/// Flat list of num_classes * images_per_class samples, grouped by class.
std::vector<SamplePtr> gen_synthetic_samples(const SyntheticConfig& config, std::uint64_t seed);

/// Class split by id parity rule and reference/query partition of the
/// validation and novel classes.
DatasetBundle make_bundle(std::vector<SamplePtr> samples, int num_parts,
                          double reference_fraction, std::uint64_t seed);

DatasetBundle gen_synthetic(const SyntheticConfig& config, std::uint64_t seed);

/// Part whose attribute carries the identity of class_id under the single_part design.
int discriminative_part(const SyntheticConfig& config, int class_id);

}  // namespace posenorm
