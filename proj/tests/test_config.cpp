#include "doctest.h"

#include "posenorm/config.hpp"

#include "json.hpp"

#include <cstdlib>

using namespace posenorm;
using nlohmann::json;

namespace {

struct EnvGuard {
  EnvGuard() { unsetenv(kDataRootEnv); }
  ~EnvGuard() { unsetenv(kDataRootEnv); }
};

}  // namespace

TEST_CASE("every preset resolves and survives a json round trip") {
  EnvGuard env;
  const auto names = preset_names();
  REQUIRE(names.size() >= 30);
  for (const auto& name : names) {
    CAPTURE(name);
    const RunConfig c = preset(name);
    CHECK(c.preset == name);
    const RunConfig back = resolve_config(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK_THROWS_WITH(preset("cub-proto-nope"), doctest::Contains("unknown preset 'cub-proto-nope'"));
}

TEST_CASE("preset hyper-parameters follow the published tables") {
  EnvGuard env;
  const RunConfig pn = preset("cub-proto-pn-convnet4");
  CHECK(pn.model.aggregator == Aggregator::pose);
  CHECK(pn.model.backbone.arch == Arch::convnet4);
  CHECK(pn.train.alpha == 100);
  CHECK(pn.train.optimizer.kind == nn::OptimizerKind::sgd);
  CHECK(pn.train.optimizer.learning_rate == 0.1);
  CHECK(pn.train.optimizer.momentum == 0.9);
  CHECK(pn.train.schedule.epochs_per_stage == 600);
  CHECK(pn.train.schedule.stages == 2);
  CHECK(pn.train.optimizer.weight_decay == 1e-3);
  CHECK(pn.train.episode.n_way == 20);
  CHECK(pn.train.episode.k_shot == 5);
  CHECK(pn.train.episode.q_query == 15);
  CHECK(pn.model.num_parts == 15);

  const RunConfig r = preset("cub-proto-pn-resnet18");
  CHECK(r.model.backbone.arch == Arch::resnet18mod);
  CHECK(r.train.alpha == 200);
  CHECK(r.train.optimizer.weight_decay == 5e-3);

  const RunConfig bp = preset("cub-proto-bp-convnet4");
  CHECK(bp.train.optimizer.kind == nn::OptimizerKind::adam);
  CHECK(bp.train.optimizer.learning_rate == 0.001);
  CHECK(bp.train.schedule.epochs_per_stage == 800);
  CHECK(bp.train.schedule.stages == 1);

  CHECK(preset("cub-proto-bbn-convnet4").train.alpha == 10);
  CHECK(preset("cub-dynamic-pn-resnet18").train.schedule.stages == 3);
  const RunConfig f = preset("fgvc-proto-pn-convnet4");
  CHECK(f.train.alpha == 50);
  CHECK(f.train.schedule.validate_every == 40);
  CHECK(f.train.pose_batch == 400);
}

TEST_CASE("resolution order and validation") {
  EnvGuard env;
  const std::string text = R"({"preset": "cub-proto-convnet4", "seed": 7, "data": {"root": "/from/file"}})";
  RunConfig c = resolve_config(text);
  CHECK(c.seed == 7);
  CHECK(c.train.seed == 7);
  CHECK(c.data.root == "/from/file");
  CHECK(c.train.schedule.epochs_per_stage == 400);

  setenv(kDataRootEnv, "/from/env", 1);
  CHECK(resolve_config(text).data.root == "/from/env");
  c = resolve_config(text, {"data.root=/from/flag", "train.alpha=3.5", "eval.shots=[\"1\",\"all\"]",
                            "model.aggregator=pose"});
  CHECK(c.data.root == "/from/flag");
  CHECK(c.train.alpha == 3.5);
  CHECK(c.eval.shots == std::vector<std::string>{"1", "all"});
  CHECK(c.model.aggregator == Aggregator::pose);
  CHECK(resolve_config(text, {}, "cub-proto-pn-convnet4").preset == "cub-proto-pn-convnet4");

  CHECK_THROWS_WITH(resolve_config(R"({"train": {"episode": {"n_wya": 5}}})"),
                    doctest::Contains("unknown config key 'train.episode.n_wya'"));
  CHECK_THROWS_WITH(resolve_config("{}", {"train.bogus=1"}), doctest::Contains("unknown config key 'train.bogus'"));
  CHECK_THROWS_WITH(resolve_config(R"({"train": {"alpha": "big"}})"), doctest::Contains("config key 'train.alpha'"));
  CHECK_THROWS_WITH(resolve_config(R"({"train": {"annotation_fraction": 0}})"),
                    doctest::Contains("train.annotation_fraction"));
  CHECK_THROWS_WITH(resolve_config(R"({"eval": {"shots": ["3x"]}})"), doctest::Contains("eval.shots"));
  CHECK_THROWS_WITH(resolve_config(R"({"model": {"aggregator": "max"}})"), doctest::Contains("max"));
  CHECK_THROWS_WITH(resolve_config("[1, 2]"), doctest::Contains("JSON object"));
  CHECK_THROWS_WITH(resolve_config("{oops"), doctest::Contains("not valid JSON"));
  CHECK_THROWS(resolve_config("{}", {"seed"}));
}

TEST_CASE("config hash tracks every value") {
  EnvGuard env;
  const RunConfig a = preset("synthetic-proto-pn-convnet4");
  RunConfig b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.eval.n_trials += 1;
  CHECK(config_hash(a) != config_hash(b));
  const json j = json::parse(to_json(a));
  CHECK(j.at("model").at("aggregator") == "pose");
  CHECK(j.at("data").at("source") == "synthetic");
}
