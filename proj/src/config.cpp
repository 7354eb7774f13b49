#include "posenorm/config.hpp"

#include "json.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace posenorm {

namespace {

using json = nlohmann::json;

std::string kind_name(nn::OptimizerKind k) { return k == nn::OptimizerKind::adam ? "adam" : "sgd"; }

nn::OptimizerKind kind_from(const std::string& s) {
  if (s == "sgd") return nn::OptimizerKind::sgd;
  if (s == "adam") return nn::OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd or adam)");
}

std::string design_name(ClassDesign d) {
  switch (d) {
    case ClassDesign::single_part: return "single_part";
    case ClassDesign::permutation: return "permutation";
    default: return "random";
  }
}

ClassDesign design_from(const std::string& s) {
  if (s == "random") return ClassDesign::random;
  if (s == "single_part") return ClassDesign::single_part;
  if (s == "permutation") return ClassDesign::permutation;
  throw std::invalid_argument("unknown synthetic design '" + s + "' (expected random, single_part or permutation)");
}

json to_tree(const RunConfig& c) {
  const auto& s = c.data.synthetic;
  const auto& t = c.train;
  const auto& m = c.model;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"out_dir", c.out_dir},
      {"data",
       {{"source", c.data.source},
        {"root", c.data.root},
        {"pose_root", c.data.pose_root},
        {"reference_fraction", c.data.reference_fraction},
        {"synthetic",
         {{"num_classes", s.num_classes},
          {"images_per_class", s.images_per_class},
          {"num_parts", s.num_parts},
          {"image_size", s.image_size},
          {"clutter", s.clutter},
          {"distractors", s.distractors},
          {"outline", s.outline},
          {"part_radius", s.part_radius},
          {"min_part_distance", s.min_part_distance},
          {"missing_part_probability", s.missing_part_probability},
          {"placement_retries", s.placement_retries},
          {"num_colors", s.num_colors},
          {"num_textures", s.num_textures},
          {"design", design_name(s.design)}}}}},
      {"model",
       {{"arch", to_string(m.backbone.arch)},
        {"input_size", m.backbone.input_size},
        {"tap_point", m.backbone.tap_point},
        {"algorithm", to_string(m.algorithm)},
        {"aggregator", to_string(m.aggregator)},
        {"num_parts", m.num_parts},
        {"upn_parts", m.upn_parts},
        {"upn_temperature", m.upn_temperature}}},
      {"train",
       {{"alpha", t.alpha},
        {"optimizer",
         {{"kind", kind_name(t.optimizer.kind)},
          {"learning_rate", t.optimizer.learning_rate},
          {"momentum", t.optimizer.momentum},
          {"weight_decay", t.optimizer.weight_decay},
          {"beta1", t.optimizer.beta1},
          {"beta2", t.optimizer.beta2},
          {"eps", t.optimizer.adam_eps}}},
        {"schedule",
         {{"epochs_per_stage", t.schedule.epochs_per_stage},
          {"stages", t.schedule.stages},
          {"gamma", t.schedule.gamma},
          {"validate_every", t.schedule.validate_every}}},
        {"episode", {{"n_way", t.episode.n_way}, {"k_shot", t.episode.k_shot}, {"q_query", t.episode.q_query}}},
        {"batch_size", t.batch_size},
        {"episodes_per_epoch", t.episodes_per_epoch},
        {"annotation_fraction", t.annotation_fraction},
        {"pose_batch_per_class", t.pose_batch_per_class},
        {"predicted_attention", t.predicted_attention},
        {"pose_batch_scale", t.pose_batch_scale},
        {"pose_batch", t.pose_batch},
        {"finetune",
         {{"epochs", t.finetune.epochs},
          {"learning_rate", t.finetune.learning_rate},
          {"batch_size", t.finetune.batch_size}}},
        {"generator",
         {{"epochs", t.generator.epochs},
          {"learning_rate", t.generator.learning_rate},
          {"fake_novel", t.generator.fake_novel},
          {"fake_base", t.generator.fake_base},
          {"images_per_class", t.generator.images_per_class},
          {"shots", t.generator.shots},
          {"cosine", t.generator.cosine}}},
        {"checkpoint_every", t.checkpoint_every}}},
      {"eval",
       {{"shots", c.eval.shots},
        {"n_trials", c.eval.n_trials},
        {"all_shot_passes", c.eval.all_shot_passes},
        {"pck_thresholds", c.eval.pck_thresholds},
        {"neighbors_k", c.eval.neighbors_k},
        {"neighbor_queries", c.eval.neighbor_queries},
        {"fractions", c.eval.fractions},
        {"runs", c.eval.runs}}},
  };
}

/// Typed read of a dotted key with the key named in any error.
template <typename T>
T get(const json& root, const std::string& dotted) {
  const json* node = &root;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) node = &node->at(part);
  try {
    return node->get<T>();
  } catch (const json::exception&) {
    throw std::invalid_argument("config key '" + dotted + "': expected " +
                                (std::is_same_v<T, std::string> ? std::string("a string")
                                 : std::is_same_v<T, bool>      ? std::string("a boolean")
                                 : std::is_arithmetic_v<T>      ? std::string("a number")
                                                                : std::string("a list")) +
                                ", got " + node->dump());
  }
}

RunConfig from_tree(const json& j) {
  RunConfig c;
  c.preset = get<std::string>(j, "preset");
  c.seed = get<std::uint64_t>(j, "seed");
  c.out_dir = get<std::string>(j, "out_dir");
  c.data.source = get<std::string>(j, "data.source");
  c.data.root = get<std::string>(j, "data.root");
  c.data.pose_root = get<std::string>(j, "data.pose_root");
  c.data.reference_fraction = get<double>(j, "data.reference_fraction");
  auto& s = c.data.synthetic;
  s.num_classes = get<int>(j, "data.synthetic.num_classes");
  s.images_per_class = get<int>(j, "data.synthetic.images_per_class");
  s.num_parts = get<int>(j, "data.synthetic.num_parts");
  s.image_size = get<int>(j, "data.synthetic.image_size");
  s.clutter = get<double>(j, "data.synthetic.clutter");
  s.distractors = get<int>(j, "data.synthetic.distractors");
  s.outline = get<double>(j, "data.synthetic.outline");
  s.part_radius = get<double>(j, "data.synthetic.part_radius");
  s.min_part_distance = get<double>(j, "data.synthetic.min_part_distance");
  s.missing_part_probability = get<double>(j, "data.synthetic.missing_part_probability");
  s.placement_retries = get<int>(j, "data.synthetic.placement_retries");
  s.num_colors = get<int>(j, "data.synthetic.num_colors");
  s.num_textures = get<int>(j, "data.synthetic.num_textures");
  s.design = design_from(get<std::string>(j, "data.synthetic.design"));
  s.reference_fraction = c.data.reference_fraction;

  auto& m = c.model;
  m.backbone.arch = arch_from_string(get<std::string>(j, "model.arch"));
  m.backbone.input_size = get<int>(j, "model.input_size");
  m.backbone.tap_point = get<std::string>(j, "model.tap_point");
  m.algorithm = algorithm_from_string(get<std::string>(j, "model.algorithm"));
  m.aggregator = aggregator_from_string(get<std::string>(j, "model.aggregator"));
  m.num_parts = get<int>(j, "model.num_parts");
  m.upn_parts = get<int>(j, "model.upn_parts");
  m.upn_temperature = get<double>(j, "model.upn_temperature");

  auto& t = c.train;
  t.alpha = get<double>(j, "train.alpha");
  t.optimizer.kind = kind_from(get<std::string>(j, "train.optimizer.kind"));
  t.optimizer.learning_rate = get<double>(j, "train.optimizer.learning_rate");
  t.optimizer.momentum = get<double>(j, "train.optimizer.momentum");
  t.optimizer.weight_decay = get<double>(j, "train.optimizer.weight_decay");
  t.optimizer.beta1 = get<double>(j, "train.optimizer.beta1");
  t.optimizer.beta2 = get<double>(j, "train.optimizer.beta2");
  t.optimizer.adam_eps = get<double>(j, "train.optimizer.eps");
  t.schedule.epochs_per_stage = get<int>(j, "train.schedule.epochs_per_stage");
  t.schedule.stages = get<int>(j, "train.schedule.stages");
  t.schedule.gamma = get<double>(j, "train.schedule.gamma");
  t.schedule.validate_every = get<int>(j, "train.schedule.validate_every");
  t.episode.n_way = get<int>(j, "train.episode.n_way");
  t.episode.k_shot = get<int>(j, "train.episode.k_shot");
  t.episode.q_query = get<int>(j, "train.episode.q_query");
  t.batch_size = get<int>(j, "train.batch_size");
  t.episodes_per_epoch = get<int>(j, "train.episodes_per_epoch");
  t.annotation_fraction = get<double>(j, "train.annotation_fraction");
  t.pose_batch_per_class = get<int>(j, "train.pose_batch_per_class");
  t.predicted_attention = get<bool>(j, "train.predicted_attention");
  t.pose_batch_scale = get<double>(j, "train.pose_batch_scale");
  t.pose_batch = get<int>(j, "train.pose_batch");
  t.finetune.epochs = get<int>(j, "train.finetune.epochs");
  t.finetune.learning_rate = get<double>(j, "train.finetune.learning_rate");
  t.finetune.batch_size = get<int>(j, "train.finetune.batch_size");
  t.generator.epochs = get<int>(j, "train.generator.epochs");
  t.generator.learning_rate = get<double>(j, "train.generator.learning_rate");
  t.generator.fake_novel = get<int>(j, "train.generator.fake_novel");
  t.generator.fake_base = get<int>(j, "train.generator.fake_base");
  t.generator.images_per_class = get<int>(j, "train.generator.images_per_class");
  t.generator.shots = get<int>(j, "train.generator.shots");
  t.generator.cosine = get<bool>(j, "train.generator.cosine");
  t.checkpoint_every = get<int>(j, "train.checkpoint_every");
  t.seed = c.seed;

  c.eval.shots = get<std::vector<std::string>>(j, "eval.shots");
  c.eval.n_trials = get<int>(j, "eval.n_trials");
  c.eval.all_shot_passes = get<int>(j, "eval.all_shot_passes");
  c.eval.pck_thresholds = get<std::vector<double>>(j, "eval.pck_thresholds");
  c.eval.neighbors_k = get<int>(j, "eval.neighbors_k");
  c.eval.neighbor_queries = get<int>(j, "eval.neighbor_queries");
  c.eval.fractions = get<std::vector<double>>(j, "eval.fractions");
  c.eval.runs = get<int>(j, "eval.runs");
  return c;
}

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw std::invalid_argument("config key '" + key + "': " + what);
}

void validate(const RunConfig& c) {
  check(c.data.source == "files" || c.data.source == "synthetic", "data.source", "expected files or synthetic");
  check(c.data.reference_fraction > 0 && c.data.reference_fraction <= 1, "data.reference_fraction", "must lie in (0, 1]");
  check(c.model.num_parts > 0, "model.num_parts", "must be positive");
  check(c.model.upn_parts > 0, "model.upn_parts", "must be positive");
  check(c.model.upn_temperature > 0, "model.upn_temperature", "must be positive");
  check(c.train.alpha >= 0, "train.alpha", "must be non-negative");
  check(c.train.optimizer.learning_rate > 0, "train.optimizer.learning_rate", "must be positive");
  check(c.train.schedule.epochs_per_stage > 0, "train.schedule.epochs_per_stage", "must be positive");
  check(c.train.schedule.stages > 0, "train.schedule.stages", "must be positive");
  check(c.train.schedule.validate_every >= 0, "train.schedule.validate_every", "must be non-negative");
  check(c.train.episode.n_way > 0 && c.train.episode.k_shot > 0 && c.train.episode.q_query > 0, "train.episode",
        "n_way, k_shot and q_query must be positive");
  check(c.train.batch_size > 0, "train.batch_size", "must be positive");
  check(c.train.episodes_per_epoch >= 0, "train.episodes_per_epoch", "must be non-negative");
  check(c.train.annotation_fraction > 0 && c.train.annotation_fraction <= 1, "train.annotation_fraction",
        "must lie in (0, 1]");
  check(c.train.pose_batch_per_class >= 0, "train.pose_batch_per_class", "must be non-negative");
  check(c.train.pose_batch_scale > 0, "train.pose_batch_scale", "must be positive");
  check(c.train.pose_batch > 0, "train.pose_batch", "must be positive");
  check(c.train.finetune.epochs > 0 && c.train.finetune.batch_size > 0, "train.finetune", "epochs and batch_size must be positive");
  check(c.train.generator.epochs > 0, "train.generator.epochs", "must be positive");
  check(c.train.checkpoint_every >= 0, "train.checkpoint_every", "must be non-negative");
  check(!c.eval.shots.empty(), "eval.shots", "must not be empty");
  for (const auto& s : c.eval.shots) {
    if (s == "all") continue;
    bool ok = !s.empty() && s.find_first_not_of("0123456789") == std::string::npos && std::stoi(s) > 0;
    check(ok, "eval.shots", "entries must be positive integers or \"all\", got \"" + s + "\"");
  }
  check(c.eval.n_trials > 0, "eval.n_trials", "must be positive");
  check(c.eval.all_shot_passes > 0, "eval.all_shot_passes", "must be positive");
  check(c.eval.neighbors_k > 0, "eval.neighbors_k", "must be positive");
  check(c.eval.neighbor_queries >= 0, "eval.neighbor_queries", "must be non-negative");
  check(!c.eval.fractions.empty(), "eval.fractions", "must not be empty");
  for (double f : c.eval.fractions) check(f > 0 && f <= 1, "eval.fractions", "entries must lie in (0, 1]");
  check(c.eval.runs > 0, "eval.runs", "must be positive");
}

void merge(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw std::invalid_argument("config" + (prefix.empty() ? "" : " key '" + prefix + "'") + ": expected an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw std::invalid_argument("unknown config key '" + path + "'");
    if (base[key].is_object())
      merge(base[key], value, path);
    else
      base[key] = value;
  }
}

void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override '" + assignment + "' must look like key.path=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) {
    if (!node->is_object() || !node->contains(part)) throw std::invalid_argument("unknown config key '" + key + "'");
    node = &(*node)[part];
  }
  if (node->is_object()) throw std::invalid_argument("config key '" + key + "' is a section, not a value");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded() || (node->is_string() && !value.is_string())) value = text;
  *node = value;
}

// ---- presets ---------------------------------------------------------------

struct Row {
  const char* model;
  Algorithm algorithm;
  Aggregator aggregator;
  nn::OptimizerKind kind;
  double lr, gamma;
  int epochs, stages;
  double weight_decay;
};

using nn::OptimizerKind;
constexpr auto SGD = OptimizerKind::sgd;
constexpr auto ADAM = OptimizerKind::adam;

// CUB hyper-parameters per backbone.
const Row kCubConvnet[] = {
    {"transfer", Algorithm::transfer, Aggregator::avg, SGD, 0.1, 0.1, 200, 2, 5e-4},
    {"transfer-pn", Algorithm::transfer, Aggregator::pose, SGD, 0.1, 0.1, 200, 2, 5e-4},
    {"transfer-pn-gt", Algorithm::transfer, Aggregator::pose_gt, SGD, 0.1, 0.1, 200, 2, 5e-4},
    {"proto", Algorithm::proto, Aggregator::avg, SGD, 0.1, 0.1, 400, 2, 5e-4},
    {"proto-mt", Algorithm::proto, Aggregator::avg_multitask, SGD, 0.1, 0.1, 600, 2, 1e-3},
    {"proto-bp", Algorithm::proto, Aggregator::bilinear, ADAM, 0.001, 1.0, 800, 1, 0},
    {"proto-bbn", Algorithm::proto, Aggregator::bbn, SGD, 0.01, 0.1, 400, 2, 5e-4},
    {"proto-upn", Algorithm::proto, Aggregator::upn, SGD, 0.1, 0.1, 600, 2, 1e-3},
    {"proto-pn", Algorithm::proto, Aggregator::pose, SGD, 0.1, 0.1, 600, 2, 1e-3},
    {"proto-pn-gt", Algorithm::proto, Aggregator::pose_gt, SGD, 0.1, 0.1, 400, 2, 5e-4},
    {"dynamic", Algorithm::dynamic, Aggregator::avg, SGD, 0.1, 0.1, 200, 2, 5e-4},
    {"dynamic-pn", Algorithm::dynamic, Aggregator::pose, SGD, 0.1, 0.1, 100, 2, 5e-4},
    {"dynamic-pn-gt", Algorithm::dynamic, Aggregator::pose_gt, SGD, 0.1, 0.1, 50, 2, 5e-4},
};

const Row kCubResnet[] = {
    {"transfer", Algorithm::transfer, Aggregator::avg, SGD, 0.1, 0.1, 100, 2, 1e-3},
    {"transfer-pn", Algorithm::transfer, Aggregator::pose, SGD, 0.1, 0.1, 100, 2, 1e-3},
    {"transfer-pn-gt", Algorithm::transfer, Aggregator::pose_gt, SGD, 0.1, 0.1, 100, 2, 1e-3},
    {"proto", Algorithm::proto, Aggregator::avg, SGD, 0.1, 0.1, 300, 2, 1e-3},
    {"proto-mt", Algorithm::proto, Aggregator::avg_multitask, SGD, 0.1, 0.1, 300, 2, 5e-3},
    {"proto-bp", Algorithm::proto, Aggregator::bilinear, ADAM, 0.001, 1.0, 600, 1, 1e-3},
    {"proto-bbn", Algorithm::proto, Aggregator::bbn, ADAM, 0.1, 0.5, 160, 5, 0},
    {"proto-upn", Algorithm::proto, Aggregator::upn, SGD, 0.1, 0.1, 200, 2, 5e-3},
    {"proto-pn", Algorithm::proto, Aggregator::pose, SGD, 0.1, 0.1, 300, 2, 5e-3},
    {"proto-pn-gt", Algorithm::proto, Aggregator::pose_gt, SGD, 0.1, 0.1, 300, 2, 5e-3},
    {"dynamic", Algorithm::dynamic, Aggregator::avg, SGD, 0.1, 0.1, 100, 2, 1e-3},
    {"dynamic-pn", Algorithm::dynamic, Aggregator::pose, SGD, 0.1, 0.1, 25, 3, 1e-3},
    {"dynamic-pn-gt", Algorithm::dynamic, Aggregator::pose_gt, SGD, 0.1, 0.1, 25, 3, 1e-3},
};

const Row kFgvcConvnet[] = {
    {"proto", Algorithm::proto, Aggregator::avg, SGD, 0.1, 0.1, 500, 2, 1e-3},
    {"proto-pn", Algorithm::proto, Aggregator::pose, SGD, 0.1, 0.1, 500, 2, 1e-3},
};

const Row kFgvcResnet[] = {
    {"proto", Algorithm::proto, Aggregator::avg, SGD, 0.1, 0.1, 300, 2, 1e-3},
    {"proto-pn", Algorithm::proto, Aggregator::pose, SGD, 0.1, 0.1, 300, 2, 5e-3},
};

RunConfig from_row(const Row& r, Arch arch, int num_parts, double alpha) {
  RunConfig c;
  c.model.backbone = default_backbone(arch);
  c.model.algorithm = r.algorithm;
  c.model.aggregator = r.aggregator;
  c.model.num_parts = num_parts;
  c.model.upn_parts = num_parts;
  c.train.alpha = r.aggregator == Aggregator::bbn ? 10.0 : alpha;
  c.train.optimizer.kind = r.kind;
  c.train.optimizer.learning_rate = r.lr;
  c.train.optimizer.momentum = 0.9;
  c.train.optimizer.weight_decay = r.weight_decay;
  c.train.schedule = {r.epochs, r.stages, r.gamma, 20};
  c.train.episode = {20, 5, 15};
  c.train.batch_size = 64;
  return c;
}

/// Desk-scale synthetic benchmark: ConvNet4 prototypical training on
/// generated data (40 classes: 20 base / 10 validation / 10 novel).
RunConfig synthetic_preset(Aggregator aggregator) {
  RunConfig c;
  c.data.source = "synthetic";
  c.model.backbone = default_backbone(Arch::convnet4);
  c.model.algorithm = Algorithm::proto;
  c.model.aggregator = aggregator;
  c.model.num_parts = c.data.synthetic.num_parts;
  c.model.upn_parts = c.data.synthetic.num_parts;
  c.data.synthetic.design = ClassDesign::permutation;
  c.train.alpha = 100;
  c.train.optimizer.kind = nn::OptimizerKind::adam;
  c.train.optimizer.learning_rate = 1e-3;
  c.train.optimizer.weight_decay = 5e-4;
  c.train.schedule = {20, 1, 0.1, 10};
  c.train.episode = {5, 3, 3};
  c.train.pose_batch_scale = 0.3;
  c.eval.n_trials = 100;
  return c;
}

const std::map<std::string, std::function<RunConfig()>>& registry() {
  static const auto table = [] {
    std::map<std::string, std::function<RunConfig()>> out;
    for (const Row& r : kCubConvnet)
      out[std::string("cub-") + r.model + "-convnet4"] = [&r] { return from_row(r, Arch::convnet4, 15, 100); };
    for (const Row& r : kCubResnet)
      out[std::string("cub-") + r.model + "-resnet18"] = [&r] { return from_row(r, Arch::resnet18mod, 15, 200); };
    const auto fgvc = [](const Row& r, Arch arch) {
      RunConfig c = from_row(r, arch, 5, 50);
      c.train.schedule.validate_every = 40;
      c.train.pose_batch = 400;
      return c;
    };
    for (const Row& r : kFgvcConvnet)
      out[std::string("fgvc-") + r.model + "-convnet4"] = [&r, fgvc] { return fgvc(r, Arch::convnet4); };
    for (const Row& r : kFgvcResnet)
      out[std::string("fgvc-") + r.model + "-resnet18"] = [&r, fgvc] { return fgvc(r, Arch::resnet18mod); };
    out["synthetic-proto-convnet4"] = [] { return synthetic_preset(Aggregator::avg); };
    out["synthetic-proto-pn-convnet4"] = [] { return synthetic_preset(Aggregator::pose); };
    return out;
  }();
  return table;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> out;
  for (const auto& [name, _] : registry()) out.push_back(name);
  return out;
}

RunConfig preset(const std::string& name) {
  const auto& table = registry();
  const auto it = table.find(name);
  if (it == table.end()) throw std::invalid_argument("unknown preset '" + name + "'");
  RunConfig c = it->second();
  c.preset = name;
  return c;
}

std::string to_json(const RunConfig& config) { return to_tree(config).dump(2); }

RunConfig resolve_config(const std::string& json_text, const std::vector<std::string>& overrides,
                         const std::string& preset_override) {
  json user = json::object();
  if (!json_text.empty()) {
    try {
      user = json::parse(json_text, nullptr, true, true);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) throw std::invalid_argument("config must be a JSON object");
  }
  std::string name = preset_override;
  if (name.empty() && user.contains("preset")) {
    if (!user["preset"].is_string()) throw std::invalid_argument("config key 'preset': expected a string");
    name = user["preset"].get<std::string>();
  }
  json tree = to_tree(name.empty() ? RunConfig{} : preset(name));
  merge(tree, user, "");
  if (!preset_override.empty()) tree["preset"] = preset_override;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) tree["data"]["root"] = env;
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig c = from_tree(tree);
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides,
                      const std::string& preset_override) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return resolve_config(buf.str(), overrides, preset_override);
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_tree(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace posenorm
