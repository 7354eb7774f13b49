#include "posenorm/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <stdexcept>

namespace posenorm {

namespace {

constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {0.92f, 0.14f, 0.10f},  // red
    {0.10f, 0.78f, 0.20f},  // green
    {0.15f, 0.30f, 0.95f},  // blue
    {0.95f, 0.88f, 0.10f},  // yellow
    {0.85f, 0.15f, 0.85f},  // magenta
    {0.10f, 0.85f, 0.90f},  // cyan
    {1.00f, 0.55f, 0.05f},  // orange
    {0.96f, 0.96f, 0.96f},  // white
}};

constexpr int kNumShapes = 6;

// Shape membership for offset (dx, dy) from the part centre, radius r.
bool inside_shape(int shape, double dx, double dy, double r) {
  const double d = std::hypot(dx, dy);
  switch (shape % kNumShapes) {
    case 0:  // disc
      return d <= r;
    case 1:  // square
      return std::abs(dx) <= 0.85 * r && std::abs(dy) <= 0.85 * r;
    case 2:  // triangle, apex up
      return dy >= -r && dy <= 0.7 * r && std::abs(dx) <= r * (dy + r) / (1.7 * r);
    case 3:  // diamond
      return std::abs(dx) + std::abs(dy) <= 1.15 * r;
    case 4:  // ring
      return d <= r && d >= 0.55 * r;
    default:  // cross
      return (std::abs(dx) <= 0.35 * r && std::abs(dy) <= r) ||
             (std::abs(dy) <= 0.35 * r && std::abs(dx) <= r);
  }
}

float texture_factor(int texture, int row, int col) {
  switch (texture) {
    case 0:
      return 1.0f;
    case 1:  // diagonal stripes
      return ((row + col) / 2) % 2 == 0 ? 1.0f : 0.4f;
    default:  // checker dots
      return ((row / 2) + (col / 2)) % 2 == 0 ? 1.0f : 0.55f;
  }
}

int hamming(const ClassAttributes& a, const ClassAttributes& b) {
  int d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] == b[i] ? 0 : 1;
  return d;
}

void check_config(const SyntheticConfig& c) {
  require(c.num_classes > 0 && c.images_per_class > 0, "synthetic: empty dataset requested");
  require(c.num_parts > 0, "synthetic: num_parts must be positive");
  require(c.image_size >= 16, "synthetic: image_size too small");
  require(c.clutter >= 0 && c.clutter <= 1, "synthetic: clutter must be in [0,1]");
  require(c.num_colors >= 2 && c.num_colors <= static_cast<int>(kPalette.size()),
          "synthetic: num_colors must be in [2, 8]");
  require(c.num_textures >= 1 && c.num_textures <= 3, "synthetic: num_textures must be in [1,3]");
  require(c.distractors >= 0, "synthetic: distractors must be non-negative");
  require(c.outline >= 0, "synthetic: outline must be non-negative");
  require(c.missing_part_probability >= 0 && c.missing_part_probability < 1,
          "synthetic: missing_part_probability must be in [0,1)");
}

}  // namespace

std::vector<ClassAttributes> make_class_attributes(const SyntheticConfig& config,
                                                   std::uint64_t seed) {
  check_config(config);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<int> color(0, config.num_colors - 1);
  std::uniform_int_distribution<int> texture(0, config.num_textures - 1);
  const auto draw = [&] {
    ClassAttributes a(config.num_parts);
    for (auto& p : a) p = {color(rng), texture(rng)};
    return a;
  };

  std::vector<ClassAttributes> classes;
  if (config.design == ClassDesign::single_part) {
    const int variants_needed = (config.num_classes + config.num_parts - 1) / config.num_parts;
    const int combos = config.num_colors * config.num_textures;
    require(variants_needed < combos,
            "synthetic: single_part design needs num_colors * num_textures > ceil(num_classes / num_parts)");
    const ClassAttributes base = draw();
    for (int c = 0; c < config.num_classes; ++c) {
      ClassAttributes a = base;
      const int part = c % config.num_parts;
      const int k = (base[part].color * config.num_textures + base[part].texture + 1 + c / config.num_parts) % combos;
      a[part] = {k / config.num_textures, k % config.num_textures};
      classes.push_back(a);
    }
    return classes;
  }

  if (config.design == ClassDesign::permutation) {
    require(config.num_colors >= config.num_parts, "synthetic: permutation design needs num_colors >= num_parts");
    double arrangements = 1;
    for (int i = 2; i <= config.num_parts; ++i) arrangements *= i;
    require(config.num_classes <= arrangements, "synthetic: permutation design needs num_classes <= num_parts!");
    std::vector<int> colors(config.num_colors);
    for (int i = 0; i < config.num_colors; ++i) colors[i] = i;
    std::shuffle(colors.begin(), colors.end(), rng);
    colors.resize(config.num_parts);
    ClassAttributes shared(config.num_parts);
    for (auto& p : shared) p.texture = texture(rng);
    std::set<std::vector<int>> used;
    while (static_cast<int>(classes.size()) < config.num_classes) {
      std::shuffle(colors.begin(), colors.end(), rng);
      if (!used.insert(colors).second) continue;
      ClassAttributes a = shared;
      for (int i = 0; i < config.num_parts; ++i) a[i].color = colors[i];
      classes.push_back(std::move(a));
    }
    return classes;
  }

  const int min_distance = config.num_parts >= 2 ? 2 : 1;
  constexpr int kMaxDraws = 100000;
  for (int draws = 0; static_cast<int>(classes.size()) < config.num_classes; ++draws) {
    if (draws > kMaxDraws)
      throw std::runtime_error("synthetic: cannot find enough distinct class attribute tables");
    ClassAttributes a = draw();
    const bool distinct = std::all_of(classes.begin(), classes.end(), [&](const auto& other) {
      return hamming(a, other) >= min_distance;
    });
    if (distinct) classes.push_back(std::move(a));
  }
  return classes;
}

int discriminative_part(const SyntheticConfig& config, int class_id) {
  return class_id % config.num_parts;
}

SceneLayout sample_layout(const SyntheticConfig& config, std::mt19937_64& rng) {
  const double margin = 1.2 * config.part_radius + 1.0;
  std::uniform_real_distribution<double> pos(margin, config.image_size - margin);
  std::bernoulli_distribution missing(config.missing_part_probability);
  SceneLayout layout;
  for (int attempt = 0; attempt < config.placement_retries; ++attempt) {
    layout.x.clear();
    layout.y.clear();
    bool ok = true;
    for (int i = 0; i < config.num_parts && ok; ++i) {
      bool placed = false;
      for (int t = 0; t < 50 && !placed; ++t) {
        const double x = pos(rng), y = pos(rng);
        placed = true;
        for (std::size_t j = 0; j < layout.x.size(); ++j)
          if (std::hypot(x - layout.x[j], y - layout.y[j]) < config.min_part_distance)
            placed = false;
        if (placed) {
          layout.x.push_back(x);
          layout.y.push_back(y);
        }
      }
      ok = placed;
    }
    if (!ok) continue;
    layout.present.assign(config.num_parts, true);
    for (int i = 0; i < config.num_parts; ++i) layout.present[i] = !missing(rng);
    layout.texture_seed = rng();
    return layout;
  }
  throw std::runtime_error("synthetic: could not place " + std::to_string(config.num_parts) +
                           " non-overlapping parts within " +
                           std::to_string(config.placement_retries) + " retries");
}

ImageSample render_sample(const SyntheticConfig& config, const ClassAttributes& attributes,
                          const SceneLayout& layout, int class_id, int id) {
  require(static_cast<int>(attributes.size()) == config.num_parts,
          "render_sample: attribute table does not match num_parts");
  const int size = config.image_size;
  std::mt19937_64 rng(layout.texture_seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  std::normal_distribution<float> noise(0.0f, 0.03f);

  ImageSample sample;
  sample.id = id;
  sample.class_id = class_id;
  sample.image = Image(size, size);
  Image& img = sample.image;

  // Background: tinted gradient.
  const Eigen::Vector3f base(0.25f + 0.25f * unit(rng), 0.25f + 0.25f * unit(rng),
                             0.25f + 0.25f * unit(rng));
  const Eigen::Vector3f grad_dir(unit(rng) - 0.5f, unit(rng) - 0.5f, unit(rng) - 0.5f);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c)
      img.at(r, c) = base + grad_dir * (0.3f * float(r + c) / float(2 * size));

  // Clutter: palette-coloured strokes and specks.
  const int strokes = static_cast<int>(std::lround(config.clutter * 30));
  for (int s = 0; s < strokes; ++s) {
    const auto& pc = kPalette[static_cast<std::size_t>(unit(rng) * config.num_colors) %
                              static_cast<std::size_t>(config.num_colors)];
    const Eigen::Vector3f color = Eigen::Vector3f(pc[0], pc[1], pc[2]) * (0.6f + 0.3f * unit(rng));
    const float x0 = unit(rng) * size, y0 = unit(rng) * size;
    if (unit(rng) < 0.6f) {
      const float angle = unit(rng) * 6.2831853f, length = 8.0f + 17.0f * unit(rng);
      for (float t = 0; t <= length; t += 0.5f) {
        const int c = static_cast<int>(x0 + t * std::cos(angle));
        const int r = static_cast<int>(y0 + t * std::sin(angle));
        if (r >= 0 && r < size && c >= 0 && c < size) img.at(r, c) = color;
      }
    } else {
      const float rad = 1.0f + 1.5f * unit(rng);
      for (int r = int(y0 - rad); r <= int(y0 + rad); ++r)
        for (int c = int(x0 - rad); c <= int(x0 + rad); ++c)
          if (r >= 0 && r < size && c >= 0 && c < size &&
              std::hypot(c + 0.5f - x0, r + 0.5f - y0) <= rad)
            img.at(r, c) = color;
    }
  }

  // Distractors: part shapes in palette colours, without the rim.
  for (int d = 0; d < config.distractors; ++d) {
    const int shape = static_cast<int>(unit(rng) * kNumShapes) % kNumShapes;
    const auto& pc = kPalette[static_cast<std::size_t>(unit(rng) * config.num_colors) %
                              static_cast<std::size_t>(config.num_colors)];
    const Eigen::Vector3f color(pc[0], pc[1], pc[2]);
    const int texture = static_cast<int>(unit(rng) * config.num_textures) % config.num_textures;
    const double r = config.part_radius * (0.88 + 0.24 * unit(rng));
    const double cx = unit(rng) * size, cy = unit(rng) * size;
    for (int row = int(cy - 1.3 * r); row <= int(cy + 1.3 * r); ++row)
      for (int col = int(cx - 1.3 * r); col <= int(cx + 1.3 * r); ++col)
        if (row >= 0 && row < size && col >= 0 && col < size &&
            inside_shape(shape, col + 0.5 - cx, row + 0.5 - cy, r))
          img.at(row, col) = color * texture_factor(texture, row, col);
  }

  // Parts.
  std::vector<Keypoint> keypoints(config.num_parts);
  double bx0 = size, by0 = size, bx1 = 0, by1 = 0;
  for (int i = 0; i < config.num_parts; ++i) {
    const double scale = 0.88 + 0.24 * unit(rng);
    const Eigen::Vector3f jitter(0.08f * (unit(rng) - 0.5f), 0.08f * (unit(rng) - 0.5f),
                                 0.08f * (unit(rng) - 0.5f));
    if (!layout.present[i]) continue;
    const double r = config.part_radius * scale;
    const double cx = layout.x[i], cy = layout.y[i];
    const auto& pc = kPalette[static_cast<std::size_t>(attributes[i].color)];
    const Eigen::Vector3f color = Eigen::Vector3f(pc[0], pc[1], pc[2]) + jitter;
    const double rim = config.outline;
    for (int row = int(cy - 1.3 * r - rim); row <= int(cy + 1.3 * r + rim); ++row) {
      for (int col = int(cx - 1.3 * r - rim); col <= int(cx + 1.3 * r + rim); ++col) {
        if (row < 0 || row >= size || col < 0 || col >= size) continue;
        const double dx = col + 0.5 - cx, dy = row + 0.5 - cy;
        if (inside_shape(i, dx, dy, r))
          img.at(row, col) = color * texture_factor(attributes[i].texture, row, col);
        else if (rim > 0 && inside_shape(i, dx * r / (r + rim), dy * r / (r + rim), r))
          img.at(row, col).setConstant(0.02f);
      }
    }
    keypoints[i] = {cx, cy, true};
    bx0 = std::min(bx0, cx - r);
    by0 = std::min(by0, cy - r);
    bx1 = std::max(bx1, cx + r);
    by1 = std::max(by1, cy + r);
  }

  for (Eigen::Index j = 0; j < img.pixels.cols(); ++j)
    for (int ch = 0; ch < 3; ++ch) img.pixels(ch, j) += noise(rng);
  img.pixels = img.pixels.cwiseMax(0.0f).cwiseMin(1.0f);

  sample.keypoints = std::move(keypoints);
  if (bx1 > bx0) {
    sample.bbox = BoundingBox{std::max(0.0, bx0), std::max(0.0, by0), std::min<double>(size, bx1),
                              std::min<double>(size, by1)};
  }
  return sample;
}

std::vector<SamplePtr> gen_synthetic_samples(const SyntheticConfig& config, std::uint64_t seed) {
  const auto classes = make_class_attributes(config, seed);
  std::mt19937_64 rng(seed);
  std::vector<SamplePtr> samples;
  samples.reserve(std::size_t(config.num_classes) * config.images_per_class);
  int id = 0;
  for (int c = 0; c < config.num_classes; ++c) {
    for (int k = 0; k < config.images_per_class; ++k) {
      const SceneLayout layout = sample_layout(config, rng);
      samples.push_back(
          std::make_shared<const ImageSample>(render_sample(config, classes[c], layout, c, id++)));
    }
  }
  return samples;
}

DatasetBundle make_bundle(std::vector<SamplePtr> samples, int num_parts,
                          double reference_fraction, std::uint64_t seed) {
  std::vector<int> ids;
  for (const auto& [cls, _] : group_by_class(samples)) ids.push_back(cls);
  DatasetBundle bundle;
  bundle.num_parts = num_parts;
  bundle.split = split_classes(ids);
  std::map<int, std::vector<SamplePtr>> held_out;
  for (const auto& s : samples) {
    if (bundle.split.base.count(s->class_id))
      bundle.repre.push_back(s);
    else
      held_out[s->class_id].push_back(s);
  }
  if (!held_out.empty()) {
    auto [refer, query] = make_reference_query(held_out, reference_fraction, seed);
    bundle.refer = std::move(refer);
    bundle.query = std::move(query);
  }
  return bundle;
}

DatasetBundle gen_synthetic(const SyntheticConfig& config, std::uint64_t seed) {
  return make_bundle(gen_synthetic_samples(config, seed), config.num_parts,
                     config.reference_fraction, seed);
}

}  // namespace posenorm
