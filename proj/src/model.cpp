#include "posenorm/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace posenorm {

namespace {

constexpr int kEmbedChunk = 32;

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& name, const std::pair<const char*, Enum> (&table)[N],
                const char* what) {
  for (const auto& [key, value] : table)
    if (name == key) return value;
  std::string valid;
  for (const auto& entry : table) valid += (valid.empty() ? "" : ", ") + std::string(entry.first);
  throw std::invalid_argument(std::string("unknown ") + what + " '" + name + "' (expected one of " +
                              valid + ")");
}

const std::pair<const char*, Algorithm> kAlgorithms[] = {
    {"transfer", Algorithm::transfer}, {"proto", Algorithm::proto}, {"dynamic", Algorithm::dynamic}};

const std::pair<const char*, Aggregator> kAggregators[] = {
    {"avg", Aggregator::avg},           {"pose", Aggregator::pose},
    {"pose_gt", Aggregator::pose_gt},   {"bilinear", Aggregator::bilinear},
    {"upn", Aggregator::upn},           {"bbn", Aggregator::bbn},
    {"avg_multitask", Aggregator::avg_multitask}};

void normal_fill(MatrixF& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(normal(rng));
}

}  // namespace

std::string to_string(Algorithm a) {
  for (const auto& [key, value] : kAlgorithms)
    if (value == a) return key;
  return "?";
}

std::string to_string(Aggregator a) {
  for (const auto& [key, value] : kAggregators)
    if (value == a) return key;
  return "?";
}

Algorithm algorithm_from_string(const std::string& name) {
  return parse_enum(name, kAlgorithms, "algorithm");
}

Aggregator aggregator_from_string(const std::string& name) {
  return parse_enum(name, kAggregators, "aggregator");
}

PoseHeadConfig pose_head_config(const Backbone<float>& backbone, int num_parts) {
  PoseHeadConfig c;
  c.in_channels = backbone.tap_channels();
  c.hidden_channels = backbone.config().arch == Arch::convnet4 ? 30 : 64;
  c.num_parts = num_parts;
  c.in_size = backbone.tap_size();
  c.out_size = backbone.out_size();
  return c;
}

Model::Model(ModelSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  require(spec_.num_parts > 0 || (spec_.aggregator != Aggregator::pose &&
                                  spec_.aggregator != Aggregator::pose_gt &&
                                  spec_.aggregator != Aggregator::avg_multitask),
          "model: pose aggregators need num_parts > 0");
  std::mt19937_64 rng(init_seed);
  backbone_ = std::make_unique<Backbone<float>>(spec_.backbone);
  backbone_->init(rng);
  switch (spec_.aggregator) {
    case Aggregator::pose:
    case Aggregator::avg_multitask:
      pose_head_.emplace(pose_head_config(*backbone_, spec_.num_parts));
      break;
    case Aggregator::bbn:
      pose_head_.emplace(pose_head_config(*backbone_, 2));
      break;
    case Aggregator::upn:
      require(spec_.upn_parts > 0, "model: upn_parts must be positive");
      if (!(spec_.upn_temperature > 0))
        throw std::invalid_argument("model: upn temperature must be positive");
      bank_.emplace(backbone_->out_channels(), spec_.upn_parts);
      break;
    default:
      break;
  }
  if (pose_head_) pose_head_->init(rng);
  if (bank_) bank_->init(rng, 0.5);

  const Eigen::Index d = feature_dim();
  const auto classes = static_cast<Eigen::Index>(spec_.base_classes.size());
  classifier_weight = nn::Param<float>("classifier.weight", classes, d);
  classifier_bias = nn::Param<float>("classifier.bias", classes, 1);
  cosine_scale = nn::Param<float>("classifier.scale", 1, 1);
  generator = nn::Param<float>("generator.weight", 0, 0);
  novel_weight = nn::Param<float>("novel.weight", 0, d);
  novel_bias = nn::Param<float>("novel.bias", 0, 1);
  normal_fill(classifier_weight.value, 1.0 / std::sqrt(double(d)), rng);
  cosine_scale.value(0, 0) = 10.0f;
  if (spec_.algorithm == Algorithm::dynamic) {
    generator = nn::Param<float>("generator.weight", d, d);
    generator.value.setIdentity();
  }
}

PoseHead<float>& Model::pose_head() {
  if (!pose_head_) throw std::logic_error("model has no pose head");
  return *pose_head_;
}

Layout Model::layout() const {
  switch (spec_.aggregator) {
    case Aggregator::avg:
    case Aggregator::avg_multitask: return Layout::avg;
    case Aggregator::pose:
    case Aggregator::pose_gt: return Layout::pose;
    case Aggregator::bilinear: return Layout::bilinear;
    case Aggregator::upn: return Layout::upn;
    case Aggregator::bbn: return Layout::bbn;
  }
  return Layout::avg;
}

int Model::attention_parts() const {
  switch (layout()) {
    case Layout::pose: return spec_.num_parts;
    case Layout::bbn: return 2;
    case Layout::upn: return spec_.upn_parts;
    default: return 0;
  }
}

Eigen::Index Model::feature_dim() const {
  return representation_size(layout(), backbone_->out_channels(),
                             layout() == Layout::upn ? spec_.upn_parts : spec_.num_parts);
}

nn::ParamList<float> Model::feature_params() {
  auto out = backbone_->params();
  if (bank_) out.push_back(&bank_->vectors);
  return out;
}

nn::ParamList<float> Model::pose_params() {
  return pose_head_ ? pose_head_->params() : nn::ParamList<float>{};
}

nn::ParamList<float> Model::all_params() {
  auto out = feature_params();
  for (auto* p : pose_params()) out.push_back(p);
  for (auto* p : {&classifier_weight, &classifier_bias, &cosine_scale, &generator, &novel_weight,
                  &novel_bias})
    out.push_back(p);
  return out;
}

void Model::finish_base_training() {
  base_trained = true;
  if (pose_head_) pose_head_->freeze();
}

void Model::freeze_features() {
  features_frozen_ = true;
  for (auto* p : feature_params()) p->frozen = true;
}

MapBatch<float> Model::stack_images(std::span<const SamplePtr> batch) const {
  const int side = spec_.backbone.input_size;
  MapBatch<float> images(3, static_cast<int>(batch.size()), side, side);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const Image& img = batch[n]->image;
    if (img.height != side || img.width != side)
      throw std::invalid_argument("model: sample " + std::to_string(batch[n]->id) + " is " +
                                  std::to_string(img.height) + "x" + std::to_string(img.width) +
                                  ", expected " + std::to_string(side) + "x" + std::to_string(side));
    images.image(static_cast<int>(n)) = img.pixels;
  }
  return images;
}

MatrixF Model::ground_truth_map(const ImageSample& sample) const {
  const int g = backbone_->out_size();
  if (spec_.aggregator == Aggregator::bbn) return rasterize_bbox(sample, g, g).values;
  PartHeatmap map = rasterize_parts(sample, g, g);
  if (map.num_parts() != spec_.num_parts)
    throw std::invalid_argument("model: sample " + std::to_string(sample.id) + " has " +
                                std::to_string(map.num_parts()) + " parts, model expects " +
                                std::to_string(spec_.num_parts));
  return map.values;
}

BatchForward Model::forward(std::span<const SamplePtr> batch, const std::vector<HeatSource>& sources,
                            const std::vector<bool>& pose_supervised, bool train) {
  const int n = static_cast<int>(batch.size());
  require(static_cast<int>(sources.size()) == n && static_cast<int>(pose_supervised.size()) == n,
          "model: per-image source/supervision flags do not match batch size");
  BatchForward fwd;
  fwd.sources = sources;
  fwd.pose_supervised = pose_supervised;
  FeatureMaps<float> maps = backbone_->forward(stack_images(batch), train);
  fwd.final_maps = std::move(maps.final);
  const int g = fwd.final_maps.height;

  const bool any_predicted = std::count(sources.begin(), sources.end(), HeatSource::predicted) > 0;
  const bool any_supervised = std::count(pose_supervised.begin(), pose_supervised.end(), true) > 0;
  if (any_supervised && !pose_head_)
    throw std::logic_error("model: pose supervision requested without a pose head");
  if (pose_head_ && (any_predicted || any_supervised))
    fwd.predicted = pose_head_->forward(maps.intermediate, train);

  const Layout lay = layout();
  const int parts = attention_parts();
  fwd.features = MatrixF(feature_dim(), n);
  if (lay == Layout::pose || lay == Layout::bbn) fwd.attention = MapBatch<float>(parts, n, g, g);
  if (any_supervised) fwd.targets = MapBatch<float>(fwd.predicted.channels(), n, g, g);

  for (int i = 0; i < n; ++i) {
    const auto F = fwd.final_maps.image(i);
    switch (lay) {
      case Layout::avg:
        fwd.features.col(i) = avg_pool(F);
        break;
      case Layout::bilinear:
        fwd.features.col(i) = bilinear_pool(F);
        break;
      case Layout::upn:
        fwd.features.col(i) = upn_pool(F, bank_->vectors.value, spec_.upn_temperature);
        break;
      case Layout::pose:
      case Layout::bbn: {
        if (sources[i] == HeatSource::ground_truth)
          fwd.attention.image(i) = ground_truth_map(*batch[i]);
        else if (sources[i] == HeatSource::predicted)
          fwd.attention.image(i) = fwd.predicted.image(i);
        else
          throw std::invalid_argument("model: pose layout needs a heatmap source per image");
        fwd.features.col(i) = pose_normalize(F, fwd.attention.image(i));
        break;
      }
    }
    if (pose_supervised[i]) {
      fwd.targets.image(i) = ground_truth_map(*batch[i]);
      fwd.pose_loss += pose_loss(fwd.predicted.image(i), fwd.targets.image(i));
      ++fwd.pose_images;
    }
  }
  if (fwd.pose_images > 0) fwd.pose_loss /= fwd.pose_images;
  return fwd;
}

void Model::backward(const BatchForward& fwd, const MatrixF& grad_features, double alpha) {
  const int n = fwd.final_maps.batch;
  const int g = fwd.final_maps.height;
  require(grad_features.cols() == n && grad_features.rows() == feature_dim(),
          "model: feature gradient has the wrong shape");
  const Layout lay = layout();
  MapBatch<float> grad_final = zeros_like(fwd.final_maps);
  MapBatch<float> grad_heat, grad_logits;
  const bool head_ran = fwd.predicted.batch > 0;
  if (head_ran) {
    grad_heat = zeros_like(fwd.predicted);
    grad_logits = zeros_like(fwd.predicted);
  }
  for (int i = 0; i < n; ++i) {
    const auto F = fwd.final_maps.image(i);
    const Vector<float> gv = grad_features.col(i);
    switch (lay) {
      case Layout::avg:
        grad_final.image(i) = avg_pool_backward<float>(F.cols(), gv);
        break;
      case Layout::bilinear:
        grad_final.image(i) = bilinear_pool_backward(F, gv);
        break;
      case Layout::upn: {
        UpnGrad<float> ug = upn_pool_backward(F, bank_->vectors.value, spec_.upn_temperature, gv);
        grad_final.image(i) = ug.features;
        if (!bank_->vectors.frozen) bank_->vectors.grad += ug.bank;
        break;
      }
      case Layout::pose:
      case Layout::bbn: {
        AttentionGrad<float> ag = pose_normalize_backward(F, fwd.attention.image(i), gv);
        grad_final.image(i) = ag.features;
        if (fwd.sources[i] == HeatSource::predicted) grad_heat.image(i) = ag.heatmap;
        break;
      }
    }
    if (fwd.pose_supervised[i] && alpha != 0.0) {
      // d(alpha * L_pose)/dz for sigmoid outputs: alpha (m - m*) / (M H W) / #images
      const float scale =
          float(alpha / (double(fwd.predicted.channels()) * g * g * fwd.pose_images));
      grad_logits.image(i) = scale * (fwd.predicted.image(i) - fwd.targets.image(i));
    }
  }

  MapBatch<float> grad_tap;
  if (head_ran) grad_tap = pose_head_->backward(grad_heat, &grad_logits);
  if (!features_frozen_) backbone_->backward(grad_final, head_ran ? &grad_tap : nullptr);
}

MatrixF Model::embed(std::span<const SamplePtr> samples) {
  HeatSource src = HeatSource::none;
  if (spec_.aggregator == Aggregator::pose_gt) src = HeatSource::ground_truth;
  else if (layout() == Layout::pose || layout() == Layout::bbn) src = HeatSource::predicted;
  MatrixF out(feature_dim(), static_cast<Eigen::Index>(samples.size()));
  for (std::size_t first = 0; first < samples.size(); first += kEmbedChunk) {
    const std::size_t count = std::min<std::size_t>(kEmbedChunk, samples.size() - first);
    const auto chunk = samples.subspan(first, count);
    BatchForward fwd = forward(chunk, std::vector<HeatSource>(count, src),
                               std::vector<bool>(count, false), false);
    out.middleCols(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count)) = fwd.features;
  }
  return out;
}

std::vector<PartHeatmap> Model::predict_heatmaps(std::span<const SamplePtr> samples) {
  auto& head = pose_head();
  std::vector<PartHeatmap> out;
  for (std::size_t first = 0; first < samples.size(); first += kEmbedChunk) {
    const std::size_t count = std::min<std::size_t>(kEmbedChunk, samples.size() - first);
    const auto maps = backbone_->forward(stack_images(samples.subspan(first, count)), false);
    const MapBatch<float> m = head.forward(maps.intermediate, false);
    for (int i = 0; i < m.batch; ++i)
      out.push_back(PartHeatmap{m.image(i), m.height, m.width, HeatmapKind::predicted});
  }
  return out;
}

std::vector<MatrixF> Model::snapshot() {
  std::vector<MatrixF> out;
  for (auto* p : all_params()) out.push_back(p->value);
  return out;
}

void Model::restore(const std::vector<MatrixF>& values) {
  auto params = all_params();
  require(values.size() == params.size(), "model: snapshot does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

}  // namespace posenorm
