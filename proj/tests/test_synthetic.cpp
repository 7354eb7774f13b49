#include "doctest.h"
#include "support.hpp"

#include "posenorm/dataset_io.hpp"
#include "posenorm/synthetic.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace posenorm;

namespace {

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.num_classes = 20;
  c.images_per_class = 30;
  c.num_parts = 5;
  c.image_size = 84;
  return c;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("posenorm_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("synthetic sample counts and annotations") {
  const auto samples = gen_synthetic_samples(small_config(), 1);
  CHECK(samples.size() == 600);
  for (const auto& s : samples) {
    REQUIRE(s->keypoints.has_value());
    CHECK(s->keypoints->size() == 5);
    REQUIRE(s->bbox.has_value());
    CHECK_NOTHROW(validate(*s));
    CHECK(s->image.pixels.minCoeff() >= 0.0f);
    CHECK(s->image.pixels.maxCoeff() <= 1.0f);
    for (const auto& k : *s->keypoints) {
      CHECK(k.x >= s->bbox->x_min);
      CHECK(k.x <= s->bbox->x_max);
    }
  }
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticConfig c = small_config();
  c.num_classes = 4;
  c.images_per_class = 5;
  const auto a = gen_synthetic(c, 9), b = gen_synthetic(c, 9);
  REQUIRE(a.repre.size() == b.repre.size());
  for (std::size_t i = 0; i < a.repre.size(); ++i) {
    CHECK(a.repre[i]->image.pixels == b.repre[i]->image.pixels);
    CHECK(a.repre[i]->id == b.repre[i]->id);
  }
  REQUIRE(a.query.size() == b.query.size());
  for (std::size_t i = 0; i < a.query.size(); ++i) CHECK(a.query[i]->id == b.query[i]->id);
  const auto other = gen_synthetic(c, 10);
  CHECK(other.repre[0]->image.pixels != a.repre[0]->image.pixels);
}

TEST_CASE("synthetic bundle respects the split and reference rule") {
  const DatasetBundle b = gen_synthetic(small_config(), 2);
  CHECK(b.num_parts == 5);
  CHECK(b.split.base.size() == 10);
  for (const auto& s : b.repre) CHECK(b.split.base.count(s->class_id) == 1);
  std::map<int, int> refer, query;
  for (const auto& s : b.refer) ++refer[s->class_id];
  for (const auto& s : b.query) ++query[s->class_id];
  CHECK(refer.size() == 10);
  for (const auto& [c, n] : refer) {
    CHECK(b.split.base.count(c) == 0);
    CHECK(n == 6);
    CHECK(query[c] == 24);
  }
}

TEST_CASE("one-part attribute change is localised to that part") {
  SyntheticConfig c = small_config();
  std::mt19937_64 rng(3);
  const auto classes = make_class_attributes(c, 3);
  for (int part = 0; part < c.num_parts; ++part) {
    ClassAttributes changed = classes[0];
    changed[part].color = (changed[part].color + 1) % c.num_colors;
    const SceneLayout layout = sample_layout(c, rng);
    const Image a = render_sample(c, classes[0], layout, 0, 0).image;
    const Image b = render_sample(c, changed, layout, 1, 1).image;
    // mask-and-compare: difference mass inside vs outside the part's disc
    double inside = 0, outside = 0;
    const double reach = 1.5 * c.part_radius * 1.12;
    for (int r = 0; r < c.image_size; ++r)
      for (int col = 0; col < c.image_size; ++col) {
        const double d = (a.at(r, col) - b.at(r, col)).cwiseAbs().sum();
        if (std::hypot(col + 0.5 - layout.x[part], r + 0.5 - layout.y[part]) <= reach)
          inside += d;
        else
          outside += d;
      }
    CHECK(inside > 1.0);
    CHECK(outside == 0.0);
  }
}

TEST_CASE("class designs") {
  SyntheticConfig c = small_config();
  const auto random = make_class_attributes(c, 4);
  for (std::size_t i = 0; i < random.size(); ++i)
    for (std::size_t j = i + 1; j < random.size(); ++j) {
      int diff = 0;
      for (int p = 0; p < c.num_parts; ++p) diff += !(random[i][p] == random[j][p]);
      CHECK(diff >= 2);
    }

  c.design = ClassDesign::single_part;
  c.num_classes = 10;
  const auto single = make_class_attributes(c, 4);
  // classes sharing a discriminative part differ only there; others agree elsewhere too
  for (int a = 0; a < 10; ++a)
    for (int b = a + 1; b < 10; ++b)
      for (int p = 0; p < c.num_parts; ++p)
        if (p != discriminative_part(c, a) && p != discriminative_part(c, b))
          CHECK(single[a][p] == single[b][p]);

  // forty classes need colour and texture variants of the template
  c.num_classes = 40;
  const auto forty = make_class_attributes(c, 4);
  for (int a = 0; a < 40; ++a)
    for (int b = a + 1; b < 40; ++b) CHECK_FALSE(forty[a] == forty[b]);
}

TEST_CASE("permutation design shares one colour set across classes") {
  SyntheticConfig c;
  c.design = ClassDesign::permutation;
  const auto classes = make_class_attributes(c, 9);
  REQUIRE(classes.size() == 40);
  const auto colours = [](const ClassAttributes& a) {
    std::vector<int> out;
    for (const auto& p : a) out.push_back(p.color);
    return out;
  };
  auto reference = colours(classes[0]);
  std::sort(reference.begin(), reference.end());
  CHECK(std::adjacent_find(reference.begin(), reference.end()) == reference.end());
  std::set<std::vector<int>> seen;
  for (const auto& a : classes) {
    auto sorted = colours(a);
    seen.insert(sorted);
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == reference);
    for (int p = 0; p < c.num_parts; ++p) CHECK(a[p].texture == classes[0][p].texture);
  }
  CHECK(seen.size() == classes.size());
  c.num_classes = 121;
  CHECK_THROWS_WITH(make_class_attributes(c, 9), doctest::Contains("num_parts!"));
}

TEST_CASE("placement budget exhaustion is an error") {
  SyntheticConfig c = small_config();
  c.num_parts = 6;
  c.min_part_distance = 60;
  c.placement_retries = 5;
  std::mt19937_64 rng(5);
  CHECK_THROWS_AS(sample_layout(c, rng), std::runtime_error);
}

TEST_CASE("dataset files round-trip") {
  SyntheticConfig c = small_config();
  c.num_classes = 3;
  c.images_per_class = 4;
  const auto samples = gen_synthetic_samples(c, 6);
  const auto root = scratch("roundtrip");
  write_dataset(root, samples, 5);
  CHECK(std::filesystem::exists(root / "images.txt"));
  CHECK(std::filesystem::exists(root / "parts.txt"));
  CHECK(std::filesystem::exists(root / "bboxes.txt"));
  const LoadedDataset loaded = load_dataset(root, 84);
  CHECK(loaded.num_parts == 5);
  REQUIRE(loaded.samples.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& a = *samples[i];
    const auto& b = *loaded.samples[i];
    CHECK(a.class_id == b.class_id);
    CHECK((a.image.pixels - b.image.pixels).cwiseAbs().maxCoeff() <= 0.5f / 255.0f + 1e-6f);
    for (int p = 0; p < 5; ++p) {
      CHECK((*a.keypoints)[p].x == (*b.keypoints)[p].x);
      CHECK((*a.keypoints)[p].visible == (*b.keypoints)[p].visible);
    }
    CHECK(a.bbox->x_max == doctest::Approx(b.bbox->x_max).epsilon(1e-12));
  }
  std::filesystem::remove_all(root);
}

TEST_CASE("loader reports malformed rows with their location") {
  const auto root = scratch("malformed");
  std::filesystem::create_directories(root / "images");
  Image img(8, 8);
  write_ppm(root / "images" / "a.ppm", img);
  std::ofstream(root / "images.txt") << "images/a.ppm 0\n";
  std::ofstream(root / "parts.txt") << "1 1 3 3 1\n1 2 oops 3 1\n";
  CHECK_THROWS_WITH(load_dataset(root, 8), doctest::Contains("parts.txt:2"));
  std::ofstream(root / "parts.txt") << "1 1 3 3 1\n";
  std::ofstream(root / "bboxes.txt") << "1 1 1 4 4\n";
  const LoadedDataset d = load_dataset(root, 16);
  REQUIRE(d.samples.size() == 1);
  CHECK(d.samples[0]->image.height == 16);
  CHECK((*d.samples[0]->keypoints)[0].x == doctest::Approx(6.0));
  CHECK(d.samples[0]->bbox->x_max == doctest::Approx(10.0));
  std::filesystem::remove_all(root);
}
