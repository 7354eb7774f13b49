#include "doctest.h"

#include "posenorm/checkpoint.hpp"

#include <filesystem>
#include <fstream>

using namespace posenorm;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "posenorm_ckpt_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

ModelSpec pose_spec() {
  ModelSpec s;
  s.backbone = default_backbone(Arch::convnet4);
  s.algorithm = Algorithm::transfer;
  s.aggregator = Aggregator::pose;
  s.num_parts = 4;
  s.base_classes = {0, 2, 4};
  return s;
}

}  // namespace

TEST_CASE("checkpoint round trip restores values and freeze state") {
  Model model(pose_spec(), 3);
  model.finish_base_training();
  model.freeze_features();
  model.novel_weight = nn::Param<float>("novel.weight", 2, model.feature_dim());
  model.novel_weight.value.setConstant(0.25f);
  model.novel_bias = nn::Param<float>("novel.bias", 2, 1);
  model.novel_classes = {1, 3};
  const auto path = scratch("model.ckpt");
  save_checkpoint(path, model, "finetune-final", R"({"seed": 1})");

  const auto info = read_checkpoint_info(path);
  CHECK(info.tag == "finetune-final");
  CHECK(info.config == R"({"seed": 1})");
  CHECK(info.spec.num_parts == 4);
  CHECK(info.spec.base_classes == std::vector<int>{0, 2, 4});

  auto loaded = load_checkpoint(path);
  Model& m = *loaded.model;
  const auto a = model.snapshot(), b = m.snapshot();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  CHECK(m.base_trained);
  CHECK(m.features_frozen());
  CHECK(m.pose_head().frozen());
  CHECK(m.novel_classes == std::vector<int>{1, 3});
  CHECK(to_string(m.spec().aggregator) == "pose");
}

TEST_CASE("checkpoint errors") {
  CHECK_THROWS_WITH(load_checkpoint(scratch("absent.ckpt")), doctest::Contains("not found"));
  std::ofstream(scratch("junk.ckpt")) << "JUNKJUNKJUNK";
  CHECK_THROWS_WITH(load_checkpoint(scratch("junk.ckpt")), doctest::Contains("bad magic"));

  Model model(pose_spec(), 1);
  const auto path = scratch("v.ckpt");
  save_checkpoint(path, model, "x");
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    const std::uint32_t v = 7;
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  CHECK_THROWS_WITH(load_checkpoint(path), doctest::Contains("unsupported version 7"));

  save_checkpoint(path, model, "x");
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  CHECK_THROWS_WITH(load_checkpoint(path), doctest::Contains("truncated payload"));
}
