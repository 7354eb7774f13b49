#include "doctest.h"
#include "support.hpp"

#include "posenorm/datamodel.hpp"

#include <numeric>

using namespace posenorm;

TEST_CASE("split rule examples") {
  const std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8};
  const SplitAssignment s = split_classes(ids);
  CHECK(s.base == std::set<int>{2, 4, 6, 8});
  CHECK(s.validation == std::set<int>{1, 5});
  CHECK(s.novel == std::set<int>{3, 7});

  const std::vector<int> zero = {0};
  CHECK(split_classes(zero).base == std::set<int>{0});
  CHECK(split_classes(zero).validation.empty());

  std::vector<int> cub(200);
  std::iota(cub.begin(), cub.end(), 1);
  const SplitAssignment c = split_classes(cub);
  CHECK(c.base.size() == 100);
  CHECK(c.validation.size() == 50);
  CHECK(c.novel.size() == 50);

  const std::vector<int> dup = {3, 4, 3};
  CHECK_THROWS_WITH_AS(split_classes(dup), doctest::Contains("duplicate"), std::invalid_argument);
}

TEST_CASE("split rule is a partition") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> ids(500);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(1 + rng() % 200);
    const SplitAssignment s = split_classes(ids);
    std::set<int> all;
    all.insert(s.base.begin(), s.base.end());
    all.insert(s.validation.begin(), s.validation.end());
    all.insert(s.novel.begin(), s.novel.end());
    CHECK(all.size() == ids.size());
    CHECK(s.base.size() + s.validation.size() + s.novel.size() == ids.size());
  }
}

namespace {

std::map<int, std::vector<SamplePtr>> pools(const std::vector<int>& counts) {
  std::map<int, std::vector<SamplePtr>> out;
  int id = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (int i = 0; i < counts[c]; ++i) out[int(c)].push_back(testing::make_sample(id++, int(c), 4));
  return out;
}

}  // namespace

TEST_CASE("reference / query sampling") {
  const auto by_class = pools({10, 5, 2, 31});
  const auto [refer, query] = make_reference_query(by_class, 0.2, 7);
  auto count = [](const std::vector<SamplePtr>& v, int c) {
    return std::count_if(v.begin(), v.end(), [&](const SamplePtr& s) { return s->class_id == c; });
  };
  CHECK(count(refer, 0) == 2);
  CHECK(count(query, 0) == 8);
  CHECK(count(refer, 1) == 1);
  CHECK(count(query, 1) == 4);
  CHECK(count(refer, 2) == 1);
  CHECK(count(refer, 3) == 7);

  std::set<int> ids;
  for (const auto& s : refer) ids.insert(s->id);
  for (const auto& s : query) CHECK(ids.insert(s->id).second);
  CHECK(ids.size() == 48);

  const auto again = make_reference_query(by_class, 0.2, 7);
  CHECK(again.first == refer);
  CHECK(again.second == query);

  CHECK_THROWS_AS(make_reference_query(pools({3, 1}), 0.2, 0), std::invalid_argument);
}

TEST_CASE("part rasterization") {
  auto s = testing::make_sample(0, 0, 84, {{42, 42, true}, {0, 0, true}, {10, 70, false}});
  const PartHeatmap m = rasterize_parts(*s, 10, 10);
  CHECK(m.kind == HeatmapKind::ground_truth);
  // oracle: scan every cell for the one whose image-space span holds the point
  auto oracle = [](double x, double y) {
    for (int r = 0; r < 10; ++r)
      for (int c = 0; c < 10; ++c)
        if (y >= r * 8.4 && y < (r + 1) * 8.4 && x >= c * 8.4 && x < (c + 1) * 8.4) return r * 10 + c;
    return -1;
  };
  CHECK(m.values(0, oracle(42, 42)) == 1.0f);
  CHECK(oracle(42, 42) == 55);
  CHECK(m.values(1, 0) == 1.0f);
  CHECK(m.values.row(2).sum() == 0.0f);
  CHECK(m.values.row(0).sum() == 1.0f);

  auto hidden = testing::make_sample(1, 0, 84, {{5, 5, false}, {6, 6, false}});
  CHECK(rasterize_parts(*hidden, 10, 10).values.isZero());
  CHECK_THROWS_AS(rasterize_parts(*testing::make_sample(2, 0, 84), 10, 10), std::invalid_argument);
  CHECK_THROWS_AS(rasterize_parts(*testing::make_sample(3, 0, 84, {{90, 5, true}}), 10, 10), std::invalid_argument);
}

TEST_CASE("part rasterization round-trips cell centres") {
  for (int gh : {3, 10, 14})
    for (int r = 0; r < gh; ++r)
      for (int c = 0; c < gh; ++c) {
        const double cell = 84.0 / gh;
        auto s = testing::make_sample(0, 0, 84, {{(c + 0.5) * cell, (r + 0.5) * cell, true}});
        const PartHeatmap m = rasterize_parts(*s, gh, gh);
        CHECK(m.values(0, r * gh + c) == 1.0f);
        CHECK(m.values.sum() == 1.0f);
      }
}

TEST_CASE("bbox rasterization") {
  auto full = testing::make_sample(0, 0, 40, {}, BoundingBox{0, 0, 40, 40});
  const PartHeatmap f = rasterize_bbox(*full, 4, 4);
  CHECK((f.values.row(0).array() == 1.0f).all());
  CHECK((f.values.row(1).array() == 0.0f).all());

  auto left = testing::make_sample(1, 0, 40, {}, BoundingBox{0, 0, 20, 40});
  const PartHeatmap l = rasterize_bbox(*left, 4, 4);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      const double cx = (c + 0.5) * 10, cy = (r + 0.5) * 10;
      const float inside = (cx >= 0 && cx <= 20 && cy >= 0 && cy <= 40) ? 1.0f : 0.0f;
      CHECK(l.values(0, r * 4 + c) == inside);
    }
  CHECK((l.values.colwise().sum().array() == 1.0f).all());
  CHECK_THROWS_AS(rasterize_bbox(*testing::make_sample(2, 0, 40), 4, 4), std::invalid_argument);
}

TEST_CASE("episode sampling") {
  std::vector<SamplePtr> pool;
  for (int c = 0; c < 25; ++c)
    for (int i = 0; i < 20; ++i) pool.push_back(testing::make_sample(c * 100 + i, c, 4));

  const Episode e = sample_episode(pool, 20, 5, 15, 3);
  CHECK(e.support.size() == 100);
  CHECK(e.query.size() == 300);
  CHECK(std::set<int>(e.class_ids.begin(), e.class_ids.end()).size() == 20);
  std::set<int> support_ids;
  for (const auto& s : e.support) support_ids.insert(s.sample->id);
  for (const auto& q : e.query) {
    CHECK(support_ids.count(q.sample->id) == 0);
    CHECK(e.class_ids[q.label] == q.sample->class_id);
  }

  const Episode again = sample_episode(pool, 20, 5, 15, 3);
  CHECK(again.class_ids == e.class_ids);
  for (std::size_t i = 0; i < e.support.size(); ++i) CHECK(again.support[i].sample == e.support[i].sample);

  const Episode tiny = sample_episode(pool, 1, 1, 1, 9);
  CHECK(tiny.support.size() == 1);
  CHECK(tiny.query.size() == 1);
  CHECK(tiny.support[0].sample != tiny.query[0].sample);

  pool.resize(pool.size() - 15);  // class 24 keeps 5 samples
  CHECK_THROWS_WITH(sample_episode(pool, 25, 5, 15, 1), doctest::Contains("24"));
}

TEST_CASE("annotated designation is a per-class ceiling") {
  std::vector<SamplePtr> pool;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 30; ++i) pool.push_back(testing::make_sample(c * 100 + i, c, 4));
  for (double f : {0.05, 0.3, 0.5, 1.0}) {
    const auto chosen = designate_annotated(pool, f, 11);
    CHECK(chosen.size() == 4 * std::size_t(std::ceil(f * 30 - 1e-9)));
    CHECK(chosen == designate_annotated(pool, f, 11));
  }
}

TEST_CASE("sample validation") {
  auto bad_box = testing::make_sample(0, 0, 10, {}, BoundingBox{2, 2, 2, 8});
  CHECK_THROWS_AS(validate(*bad_box), std::invalid_argument);
  auto outside = testing::make_sample(0, 0, 10, {}, BoundingBox{2, 2, 12, 8});
  CHECK_THROWS_AS(validate(*outside), std::invalid_argument);
  auto hidden = testing::make_sample(0, 0, 10, {{50, 50, false}});
  CHECK_NOTHROW(validate(*hidden));
}
