#include "posenorm/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

namespace posenorm {

namespace {

using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

json spec_json(const ModelSpec& s) {
  return {{"arch", to_string(s.backbone.arch)},
          {"input_size", s.backbone.input_size},
          {"tap_point", s.backbone.tap_point},
          {"algorithm", to_string(s.algorithm)},
          {"aggregator", to_string(s.aggregator)},
          {"num_parts", s.num_parts},
          {"upn_parts", s.upn_parts},
          {"upn_temperature", s.upn_temperature},
          {"base_classes", s.base_classes}};
}

ModelSpec spec_parse(const json& j) {
  ModelSpec s;
  s.backbone.arch = arch_from_string(j.at("arch").get<std::string>());
  s.backbone.input_size = j.at("input_size").get<int>();
  s.backbone.tap_point = j.at("tap_point").get<std::string>();
  s.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  s.aggregator = aggregator_from_string(j.at("aggregator").get<std::string>());
  s.num_parts = j.at("num_parts").get<int>();
  s.upn_parts = j.at("upn_parts").get<int>();
  s.upn_temperature = j.at("upn_temperature").get<double>();
  s.base_classes = j.at("base_classes").get<std::vector<int>>();
  return s;
}

std::string where(const std::filesystem::path& path) { return "checkpoint " + path.string() + ": "; }

struct RawHeader {
  std::uint32_t version = 0;
  json header;
  std::streamoff payload = 0;
};

RawHeader read_header(std::ifstream& in, const std::filesystem::path& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(where(path) + "not a checkpoint (bad magic)");
  RawHeader h;
  std::uint64_t length = 0;
  if (!in.read(reinterpret_cast<char*>(&h.version), sizeof h.version) ||
      !in.read(reinterpret_cast<char*>(&length), sizeof length))
    throw std::runtime_error(where(path) + "truncated header");
  if (h.version != kCheckpointVersion)
    throw std::runtime_error(where(path) + "unsupported version " + std::to_string(h.version) +
                             " (this build reads " + std::to_string(kCheckpointVersion) + ")");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length)))
    throw std::runtime_error(where(path) + "truncated header");
  try {
    h.header = json::parse(text);
  } catch (const json::exception& e) {
    throw std::runtime_error(where(path) + "corrupt header: " + e.what());
  }
  h.payload = in.tellg();
  return h;
}

CheckpointInfo info_from(const RawHeader& h) {
  CheckpointInfo info;
  info.version = h.version;
  info.tag = h.header.at("tag").get<std::string>();
  info.config = h.header.at("config").get<std::string>();
  info.spec = spec_parse(h.header.at("spec"));
  info.base_trained = h.header.at("base_trained").get<bool>();
  info.features_frozen = h.header.at("features_frozen").get<bool>();
  return info;
}

}  // namespace

std::string spec_to_json(const ModelSpec& spec) { return spec_json(spec).dump(); }

ModelSpec spec_from_json(const std::string& text) { return spec_parse(json::parse(text)); }

void save_checkpoint(const std::filesystem::path& path, Model& model, const std::string& tag,
                     const std::string& config_json) {
  const auto params = model.all_params();
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto* p : params) {
    tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(p->value.size());
  }
  const json header = {{"tag", tag},
                       {"config", config_json},
                       {"spec", spec_json(model.spec())},
                       {"base_trained", model.base_trained},
                       {"features_frozen", model.features_frozen()},
                       {"novel_classes", model.novel_classes},
                       {"tensors", tensors}};
  const std::string text = header.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(where(path) + "cannot open for writing");
    const std::uint64_t length = text.size();
    out.write(kCheckpointMagic, 4);
    out.write(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
    out.write(reinterpret_cast<const char*>(&length), sizeof length);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto* p : params)
      out.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->value.size())));
    if (!out) throw std::runtime_error(where(path) + "write failed");
  }
  std::filesystem::rename(tmp, path);
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(where(path) + "not found");
  return info_from(read_header(in, path));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(where(path) + "not found");
  const RawHeader h = read_header(in, path);
  LoadedCheckpoint out;
  out.info = info_from(h);
  out.model = std::make_unique<Model>(out.info.spec, 0);
  Model& model = *out.model;

  struct Entry {
    Eigen::Index rows, cols;
    std::uint64_t offset;
  };
  std::map<std::string, Entry> table;
  for (const auto& t : h.header.at("tensors"))
    table[t.at("name").get<std::string>()] = {t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>(),
                                              t.at("offset").get<std::uint64_t>()};
  for (auto* p : model.all_params()) {
    auto it = table.find(p->name);
    if (it == table.end()) throw std::runtime_error(where(path) + "missing tensor '" + p->name + "'");
    const Entry& e = it->second;
    const bool resizable = p == &model.novel_weight || p == &model.novel_bias;
    if (resizable) {
      p->value.resize(e.rows, e.cols);
      p->grad = MatrixF::Zero(e.rows, e.cols);
    } else if (e.rows != p->value.rows() || e.cols != p->value.cols()) {
      throw std::runtime_error(where(path) + "tensor '" + p->name + "' is " + std::to_string(e.rows) + "x" +
                               std::to_string(e.cols) + ", model expects " + std::to_string(p->value.rows()) +
                               "x" + std::to_string(p->value.cols()));
    }
    in.seekg(h.payload + static_cast<std::streamoff>(e.offset * sizeof(float)));
    if (!in.read(reinterpret_cast<char*>(p->value.data()),
                 static_cast<std::streamsize>(sizeof(float) * static_cast<std::size_t>(p->value.size()))))
      throw std::runtime_error(where(path) + "truncated payload at tensor '" + p->name + "'");
  }
  model.novel_classes = h.header.at("novel_classes").get<std::vector<int>>();
  if (out.info.base_trained) model.finish_base_training();
  if (out.info.features_frozen) model.freeze_features();
  return out;
}

}  // namespace posenorm
