#include "posenorm/learners.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace posenorm {

namespace {

constexpr double kNormFloor = 1e-12;

std::string epoch_tag(const std::string& prefix, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04d", prefix.c_str(), epoch);
  return buf;
}

void emit(const TrainHooks& hooks, const MetricsRow& row) {
  if (hooks.on_metrics) hooks.on_metrics(row);
}

void checkpoint(const TrainHooks& hooks, const std::string& tag, Model& model) {
  if (hooks.on_checkpoint) hooks.on_checkpoint(tag, model);
}

nn::ParamList<float> updatable(const nn::ParamList<float>& params) {
  nn::ParamList<float> out;
  for (auto* p : params)
    if (p->trainable && !p->frozen) out.push_back(p);
  return out;
}

/// theta, the uPN bank and, until frozen, the pose head.
nn::ParamList<float> representation_params(Model& model) {
  auto out = model.feature_params();
  for (auto* p : model.pose_params()) out.push_back(p);
  return updatable(out);
}

int episodes_per_epoch(const TrainConfig& config, std::size_t pool) {
  if (config.episodes_per_epoch > 0) return config.episodes_per_epoch;
  const auto per = std::size_t(config.episode.n_way) * (config.episode.k_shot + config.episode.q_query);
  return static_cast<int>(std::max<std::size_t>(1, (pool + per - 1) / per));
}

std::map<int, int> label_index(const std::vector<int>& classes) {
  std::map<int, int> out;
  for (std::size_t i = 0; i < classes.size(); ++i) out[classes[i]] = static_cast<int>(i);
  return out;
}

std::vector<int> sorted_classes(std::span<const SamplePtr> samples) {
  std::vector<int> out;
  for (const auto& [c, _] : group_by_class(samples)) out.push_back(c);
  return out;
}

bool uses_attention(const Model& model) {
  return model.layout() == Layout::pose || model.layout() == Layout::bbn;
}

/// Keeps the best validation snapshot seen so far.
struct Selector {
  double best = -1;
  std::vector<MatrixF> snapshot;
  bool active = false;

  void offer(double accuracy, Model& model) {
    active = true;
    if (accuracy > best) {
      best = accuracy;
      snapshot = model.snapshot();
    }
  }
  void restore(Model& model) const {
    if (active) model.restore(snapshot);
  }
};

bool validation_due(const TrainConfig& config, const BaseData& data, int epoch_done, int total) {
  if (config.schedule.validate_every <= 0 || data.val_refer.empty() || data.val_query.empty())
    return false;
  return epoch_done % config.schedule.validate_every == 0 || epoch_done == total;
}

void validate_epoch(Model& model, const BaseData& data, const TrainConfig& config,
                    const TrainHooks& hooks, Selector& selector, int epoch_done) {
  if (!validation_due(config, data, epoch_done, config.schedule.total_epochs())) return;
  MetricsRow row;
  row.epoch = epoch_done;
  row.split = "val";
  row.accuracy = validation_accuracy(model, data.val_refer, data.val_query, config);
  emit(hooks, row);
  selector.offer(row.accuracy, model);
}

struct LinearFit {
  MatrixD weight;  ///< classes x d
  Vector<double> bias;
};

/// Softmax regression on fixed features with Adam, mini-batches in a seeded order.
LinearFit fit_linear(const MatrixD& features, std::span<const int> labels, int n_classes,
                     const FinetuneSpec& spec, std::uint64_t seed, std::vector<double>* epoch_loss = nullptr) {
  const Eigen::Index d = features.rows(), n = features.cols();
  require(n > 0, "finetune: no reference samples");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(double(d)));
  nn::Param<double> w("novel.weight", n_classes, d), b("novel.bias", n_classes, 1);
  for (Eigen::Index i = 0; i < w.value.size(); ++i) w.value.data()[i] = normal(rng);
  nn::OptimizerSpec opt;
  opt.kind = nn::OptimizerKind::adam;
  opt.learning_rate = spec.learning_rate;
  nn::Optimizer<double> adam(opt);
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0;
    int batches = 0;
    for (std::size_t first = 0; first < order.size(); first += std::size_t(spec.batch_size)) {
      const std::size_t count = std::min<std::size_t>(std::size_t(spec.batch_size), order.size() - first);
      MatrixD x(d, static_cast<Eigen::Index>(count));
      std::vector<int> y(count);
      for (std::size_t j = 0; j < count; ++j) {
        x.col(static_cast<Eigen::Index>(j)) = features.col(order[first + j]);
        y[j] = labels[static_cast<std::size_t>(order[first + j])];
      }
      MatrixD logits = w.value * x;
      logits.colwise() += b.value.col(0);
      const CrossEntropy ce = cross_entropy(logits, y);
      w.grad = ce.grad * x.transpose();
      b.grad = ce.grad.rowwise().sum();
      adam.step({&w, &b});
      loss += ce.loss;
      ++batches;
    }
    if (epoch_loss) epoch_loss->push_back(loss / std::max(1, batches));
  }
  return {w.value, b.value.col(0)};
}

std::vector<SamplePtr> collect(const std::vector<LabeledSample>& items) {
  std::vector<SamplePtr> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.sample);
  return out;
}

std::vector<SamplePtr> draw_pose_extra(const Episode& episode, const std::map<int, std::vector<SamplePtr>>& annotated_by_class,
                                       int per_class, std::mt19937_64& rng) {
  std::vector<SamplePtr> out;
  if (per_class <= 0) return out;
  for (int cls : episode.class_ids) {
    auto it = annotated_by_class.find(cls);
    if (it == annotated_by_class.end()) continue;
    std::vector<SamplePtr> pool = it->second;
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto take = std::min<std::size_t>(std::size_t(per_class), pool.size());
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
  }
  return out;
}

}  // namespace

int pose_batch_for_fraction(double fraction) {
  if (!(fraction > 0 && fraction <= 1)) throw std::invalid_argument("annotation fraction must lie in (0, 1]");
  static constexpr std::pair<double, int> kTable[] = {{0.05, 1}, {0.1, 5}, {0.2, 7}, {0.3, 10}, {0.4, 15}, {0.5, 15},
                                                      {0.6, 15}, {0.7, 15}, {0.8, 17}, {0.9, 20}, {1.0, 20}};
  int out = kTable[0].second;
  for (const auto& [f, b] : kTable)
    if (fraction + 1e-9 >= f) out = b;
  return out;
}

double Schedule::rate(double base, int epoch) const {
  const int stage = epochs_per_stage > 0 ? std::min(epoch / epochs_per_stage, std::max(0, stages - 1)) : 0;
  return base * std::pow(gamma, stage);
}

double total_loss(double few_shot_loss, double pose_loss, double alpha) {
  if (!std::isfinite(few_shot_loss) || !std::isfinite(pose_loss) || !std::isfinite(alpha))
    throw std::runtime_error("total_loss: non-finite loss (fewshot " + std::to_string(few_shot_loss) +
                             ", pose " + std::to_string(pose_loss) + "); training aborted");
  return few_shot_loss + alpha * pose_loss;
}

std::vector<int> argmax_columns(const MatrixD& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.cols()));
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.rows(); ++k)
      if (scores(k, j) > scores(best, j)) best = k;
    out[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return out;
}

CrossEntropy cross_entropy(const MatrixD& logits, std::span<const int> labels) {
  require(static_cast<Eigen::Index>(labels.size()) == logits.cols(),
          "cross_entropy: label count does not match logits");
  CrossEntropy out;
  const Eigen::Index n = logits.cols();
  out.grad = logits;
  const auto pred = argmax_columns(logits);
  int correct = 0;
  for (Eigen::Index j = 0; j < n; ++j) {
    const int y = labels[static_cast<std::size_t>(j)];
    require(y >= 0 && y < logits.rows(), "cross_entropy: label out of range");
    auto col = out.grad.col(j);
    const double peak = col.maxCoeff();
    col.array() = (col.array() - peak).exp();
    const double z = col.sum();
    col /= z;
    out.loss -= std::log(std::max(col(y), 1e-300));
    col(y) -= 1.0;
    correct += pred[static_cast<std::size_t>(j)] == y;
  }
  if (n > 0) {
    out.loss /= double(n);
    out.grad /= double(n);
    out.accuracy = 100.0 * correct / double(n);
  }
  return out;
}

MatrixD class_means(const MatrixD& features, std::span<const int> labels, int n_classes) {
  MatrixD sums = MatrixD::Zero(features.rows(), n_classes);
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    require(labels[j] >= 0 && labels[j] < n_classes, "class_means: label out of range");
    sums.col(labels[j]) += features.col(static_cast<Eigen::Index>(j));
    ++counts[static_cast<std::size_t>(labels[j])];
  }
  for (int k = 0; k < n_classes; ++k) {
    if (counts[static_cast<std::size_t>(k)] == 0)
      throw std::invalid_argument("class " + std::to_string(k) + " has no support samples");
    sums.col(k) /= double(counts[static_cast<std::size_t>(k)]);
  }
  return sums;
}

MatrixD proto_logits(const MatrixD& prototypes, const MatrixD& queries) {
  MatrixD logits = 2.0 * prototypes.transpose() * queries;
  logits.colwise() -= prototypes.colwise().squaredNorm().transpose();
  logits.rowwise() -= queries.colwise().squaredNorm();
  return logits;
}

ProtoResult proto_loss(const MatrixD& features, std::span<const int> support_labels,
                       std::span<const int> query_labels, int n_way) {
  const auto S = static_cast<Eigen::Index>(support_labels.size());
  const auto Q = static_cast<Eigen::Index>(query_labels.size());
  require(features.cols() >= S + Q, "proto_loss: fewer feature columns than samples");
  const MatrixD support = features.leftCols(S);
  const MatrixD queries = features.middleCols(S, Q);
  const MatrixD P = class_means(support, support_labels, n_way);
  ProtoResult out;
  out.ce = cross_entropy(proto_logits(P, queries), query_labels);
  const MatrixD& G = out.ce.grad;  // n_way x Q
  out.grad_features = MatrixD::Zero(features.rows(), features.cols());
  // logit_kq = -||q - p_k||^2
  const Vector<double> gsum_q = G.colwise().sum().transpose();
  MatrixD dq = 2.0 * P * G;
  dq -= 2.0 * (queries.array().rowwise() * gsum_q.transpose().array()).matrix();
  out.grad_features.middleCols(S, Q) = dq;
  const Vector<double> gsum_k = G.rowwise().sum();
  MatrixD dP = 2.0 * queries * G.transpose();
  dP -= 2.0 * (P.array().rowwise() * gsum_k.transpose().array()).matrix();
  std::vector<int> counts(static_cast<std::size_t>(n_way), 0);
  for (int y : support_labels) ++counts[static_cast<std::size_t>(y)];
  for (Eigen::Index j = 0; j < S; ++j) {
    const int y = support_labels[static_cast<std::size_t>(j)];
    out.grad_features.col(j) = dP.col(y) / double(counts[static_cast<std::size_t>(y)]);
  }
  return out;
}

MatrixD cosine_logits(const MatrixD& weights, const MatrixD& features, double scale) {
  const Vector<double> wn = weights.rowwise().norm().cwiseMax(kNormFloor);
  const Vector<double> vn = features.colwise().norm().transpose().cwiseMax(kNormFloor);
  MatrixD c = weights * features;
  c.array().colwise() /= wn.array();
  c.array().rowwise() /= vn.transpose().array();
  return scale * c;
}

CosineResult cosine_backward(const MatrixD& weights, const MatrixD& features, double scale,
                             const MatrixD& grad_logits) {
  const Vector<double> wn = weights.rowwise().norm().cwiseMax(kNormFloor);
  const Vector<double> vn = features.colwise().norm().transpose().cwiseMax(kNormFloor);
  const MatrixD W = (weights.array().colwise() / wn.array()).matrix();
  const MatrixD V = (features.array().rowwise() / vn.transpose().array()).matrix();
  const MatrixD c = W * V;
  CosineResult out;
  out.logits = scale * c;
  out.grad_scale = (grad_logits.array() * c.array()).sum();
  const MatrixD gc = scale * grad_logits;
  // d/dx of x/|x|: (I - x^ x^T)/|x|
  MatrixD gv = W.transpose() * gc;
  gv -= (V.array().rowwise() * (V.array() * gv.array()).colwise().sum()).matrix();
  out.grad_features = (gv.array().rowwise() / vn.transpose().array()).matrix();
  MatrixD gw = gc * V.transpose();
  gw -= (W.array().colwise() * (W.array() * gw.array()).rowwise().sum()).matrix();
  out.grad_weights = (gw.array().colwise() / wn.array()).matrix();
  return out;
}

MatrixD generate_weights(const MatrixD& generator, const MatrixD& support, std::span<const int> labels,
                         int n_classes) {
  const Vector<double> norms = support.colwise().norm().transpose().cwiseMax(kNormFloor);
  const MatrixD unit = (support.array().rowwise() / norms.transpose().array()).matrix();
  return (generator * class_means(unit, labels, n_classes)).transpose();
}

// ---- training ----------------------------------------------------------------

std::unordered_set<int> annotated_ids(const Model& model, std::span<const SamplePtr> repre,
                                      const TrainConfig& config) {
  const Aggregator agg = model.spec().aggregator;
  const bool needs_box = agg == Aggregator::bbn;
  const bool needs_parts = agg == Aggregator::pose || agg == Aggregator::pose_gt ||
                           agg == Aggregator::avg_multitask;
  if (!needs_box && !needs_parts) return {};
  std::vector<SamplePtr> usable;
  for (const auto& s : repre)
    if (needs_box ? s->bbox.has_value() : s->keypoints.has_value()) usable.push_back(s);
  if (agg == Aggregator::pose_gt) {
    if (usable.size() != repre.size())
      throw std::invalid_argument("pose_gt needs part annotations on every training image");
    std::unordered_set<int> all;
    for (const auto& s : usable) all.insert(s->id);
    return all;
  }
  if (usable.empty())
    throw std::invalid_argument("aggregator " + to_string(agg) + " needs annotated training images");
  return designate_annotated(usable, config.annotation_fraction, config.seed ^ 0xA1107A7EDULL);
}

std::vector<HeatSource> attention_sources(const Model& model, std::span<const SamplePtr> batch,
                                          const std::unordered_set<int>& annotated, bool gt_attention) {
  std::vector<HeatSource> out(batch.size(), HeatSource::none);
  if (model.spec().aggregator == Aggregator::pose_gt) {
    std::fill(out.begin(), out.end(), HeatSource::ground_truth);
    return out;
  }
  if (!uses_attention(model)) return out;
  for (std::size_t i = 0; i < batch.size(); ++i)
    out[i] = (gt_attention && !model.base_trained && annotated.count(batch[i]->id))
                 ? HeatSource::ground_truth
                 : HeatSource::predicted;
  return out;
}

StepStats proto_train_step(Model& model, const Episode& episode,
                           const std::unordered_set<int>& annotated,
                           std::span<const SamplePtr> pose_extra, nn::Optimizer<float>& optimizer,
                           double alpha, bool gt_attention) {
  if (episode.support.empty() || episode.query.empty())
    throw std::invalid_argument("proto_train_step: empty episode");
  std::vector<SamplePtr> batch = collect(episode.support);
  const auto query = collect(episode.query);
  batch.insert(batch.end(), query.begin(), query.end());
  const std::size_t scored = batch.size();
  const bool head = model.has_pose_head() && !model.pose_head().frozen();
  if (head) batch.insert(batch.end(), pose_extra.begin(), pose_extra.end());

  std::vector<HeatSource> sources = attention_sources(model, batch, annotated, gt_attention);
  std::vector<bool> supervised(batch.size(), false);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (!head) break;
    if (i >= scored) {
      supervised[i] = true;
      if (sources[i] == HeatSource::ground_truth) sources[i] = HeatSource::predicted;
    } else {
      supervised[i] = annotated.count(batch[i]->id) > 0;
    }
  }

  std::vector<int> support_labels, query_labels;
  for (const auto& s : episode.support) support_labels.push_back(s.label);
  for (const auto& q : episode.query) query_labels.push_back(q.label);

  const auto params = representation_params(model);
  nn::zero_grad(params);
  const BatchForward fwd = model.forward(batch, sources, supervised, true);
  const ProtoResult pr = proto_loss(fwd.features.leftCols(static_cast<Eigen::Index>(scored)).cast<double>(),
                                    support_labels, query_labels, episode.n_way);
  StepStats stats;
  stats.loss_fewshot = pr.ce.loss;
  stats.loss_pose = fwd.pose_loss;
  stats.pose_images = fwd.pose_images;
  stats.accuracy = pr.ce.accuracy;
  stats.loss_total = total_loss(pr.ce.loss, fwd.pose_loss, alpha);

  MatrixF grad = MatrixF::Zero(fwd.features.rows(), fwd.features.cols());
  grad.leftCols(static_cast<Eigen::Index>(scored)) = pr.grad_features.cast<float>();
  model.backward(fwd, grad, head ? alpha : 0.0);
  optimizer.step(params);
  return stats;
}

namespace {

struct EpochStats {
  double fewshot = 0, pose = 0, accuracy = 0;
  int steps = 0, pose_steps = 0;

  void add(const StepStats& s) {
    fewshot += s.loss_fewshot;
    accuracy += s.accuracy;
    ++steps;
    if (s.pose_images > 0) {
      pose += s.loss_pose;
      ++pose_steps;
    }
  }
  MetricsRow row(int epoch, const std::string& split) const {
    MetricsRow r;
    r.epoch = epoch;
    r.split = split;
    if (steps) {
      r.loss_fewshot = fewshot / steps;
      r.accuracy = accuracy / steps;
    }
    if (pose_steps) r.loss_pose = pose / pose_steps;
    return r;
  }
};

void check_alpha(const Model& model, const TrainConfig& config) {
  if (model.has_pose_head() && !(config.alpha > 0))
    throw std::invalid_argument("alpha must be positive when a pose loss is active (aggregator " +
                                to_string(model.spec().aggregator) + ")");
}

/// Shared episodic loop; `disjoint_pose` switches to the disjoint supervision protocol.
void episodic_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks,
                    std::span<const SamplePtr> disjoint_pose) {
  if (model.spec().algorithm != Algorithm::proto)
    throw std::invalid_argument("episodic training requires the proto algorithm");
  if (model.base_trained) throw std::logic_error("base training already finished for this model");
  require(!data.repre.empty(), "training: empty representation set");
  check_alpha(model, config);
  const bool disjoint = !disjoint_pose.empty();
  const bool predicted = disjoint || config.predicted_attention;
  const std::unordered_set<int> annotated = disjoint ? std::unordered_set<int>{}
                                                     : annotated_ids(model, data.repre, config);
  // under the predicted-attention protocols no episode image is supervised directly
  const std::unordered_set<int> step_annotated = predicted ? std::unordered_set<int>{} : annotated;
  const int per_class = config.pose_batch_per_class > 0 ? config.pose_batch_per_class
                        : config.predicted_attention
                            ? std::max(1, int(std::lround(pose_batch_for_fraction(config.annotation_fraction) *
                                                          config.pose_batch_scale)))
                            : 0;
  std::map<int, std::vector<SamplePtr>> annotated_by_class;
  for (const auto& s : data.repre)
    if (annotated.count(s->id)) annotated_by_class[s->class_id].push_back(s);

  nn::Optimizer<float> optimizer(config.optimizer);
  std::mt19937_64 rng(config.seed ^ 0x5EED0F1EULL);
  const int total = config.schedule.total_epochs();
  const int steps = episodes_per_epoch(config, data.repre.size());
  Selector selector;
  for (int epoch = 0; epoch < total; ++epoch) {
    optimizer.set_learning_rate(config.schedule.rate(config.optimizer.learning_rate, epoch));
    EpochStats stats;
    for (int step = 0; step < steps; ++step) {
      const Episode ep = sample_episode(data.repre, config.episode.n_way, config.episode.k_shot,
                                        config.episode.q_query, rng());
      std::vector<SamplePtr> extra;
      if (disjoint) {
        for (int i = 0; i < config.pose_batch; ++i)
          extra.push_back(disjoint_pose[rng() % disjoint_pose.size()]);
      } else {
        extra = draw_pose_extra(ep, annotated_by_class, per_class, rng);
      }
      stats.add(proto_train_step(model, ep, step_annotated, extra, optimizer, config.alpha, !predicted));
      if (hooks.after_step) hooks.after_step(model);
    }
    emit(hooks, stats.row(epoch + 1, "train"));
    validate_epoch(model, data, config, hooks, selector, epoch + 1);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      checkpoint(hooks, epoch_tag("epoch", epoch + 1), model);
  }
  selector.restore(model);
  model.finish_base_training();
  checkpoint(hooks, "base-final", model);
}

/// Mini-batch classification over base classes (linear for transfer, cosine
/// or dot-product for dynamic stage 1).
void classifier_train(Model& model, const BaseData& data, const TrainConfig& config,
                      const TrainHooks& hooks, bool cosine) {
  if (model.base_trained) throw std::logic_error("base training already finished for this model");
  require(!data.repre.empty(), "training: empty representation set");
  check_alpha(model, config);
  const auto& classes = model.spec().base_classes;
  if (classes.empty()) throw std::invalid_argument("model spec lists no base classes");
  const auto rows = label_index(classes);
  for (const auto& s : data.repre)
    if (!rows.count(s->class_id))
      throw std::invalid_argument("training image " + std::to_string(s->id) + " has class " +
                                  std::to_string(s->class_id) + " outside the model's base classes");
  const bool dynamic = model.spec().algorithm == Algorithm::dynamic;
  const std::unordered_set<int> annotated = annotated_ids(model, data.repre, config);

  auto params = representation_params(model);
  params.push_back(&model.classifier_weight);
  if (dynamic && cosine) params.push_back(&model.cosine_scale);
  if (!dynamic) params.push_back(&model.classifier_bias);

  nn::Optimizer<float> optimizer(config.optimizer);
  std::mt19937_64 rng(config.seed ^ 0xBA5EBA11ULL);
  std::vector<SamplePtr> order = data.repre;
  const int total = config.schedule.total_epochs();
  const bool head = model.has_pose_head();
  Selector selector;
  for (int epoch = 0; epoch < total; ++epoch) {
    optimizer.set_learning_rate(config.schedule.rate(config.optimizer.learning_rate, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    EpochStats stats;
    for (std::size_t first = 0; first < order.size(); first += std::size_t(config.batch_size)) {
      const std::size_t count = std::min<std::size_t>(std::size_t(config.batch_size), order.size() - first);
      const std::span<const SamplePtr> batch(order.data() + first, count);
      std::vector<int> labels(count);
      std::vector<bool> supervised(count, false);
      for (std::size_t i = 0; i < count; ++i) {
        labels[i] = rows.at(batch[i]->class_id);
        supervised[i] = head && annotated.count(batch[i]->id) > 0;
      }
      nn::zero_grad(params);
      const BatchForward fwd = model.forward(
          batch, attention_sources(model, batch, annotated, !config.predicted_attention), supervised, true);
      const MatrixD V = fwd.features.cast<double>();
      const MatrixD W = model.classifier_weight.value.cast<double>();
      MatrixD gradV;
      CrossEntropy ce;
      if (dynamic && cosine) {
        const double s = model.cosine_scale.value(0, 0);
        ce = cross_entropy(cosine_logits(W, V, s), labels);
        const CosineResult cb = cosine_backward(W, V, s, ce.grad);
        model.classifier_weight.grad += cb.grad_weights.cast<float>();
        model.cosine_scale.grad(0, 0) += float(cb.grad_scale);
        gradV = cb.grad_features;
      } else {
        MatrixD logits = W * V;
        if (!dynamic) logits.colwise() += model.classifier_bias.value.col(0).cast<double>();
        ce = cross_entropy(logits, labels);
        model.classifier_weight.grad += (ce.grad * V.transpose()).cast<float>();
        if (!dynamic) model.classifier_bias.grad.col(0) += ce.grad.rowwise().sum().cast<float>();
        gradV = W.transpose() * ce.grad;
      }
      StepStats s;
      s.loss_fewshot = ce.loss;
      s.accuracy = ce.accuracy;
      s.loss_pose = fwd.pose_loss;
      s.pose_images = fwd.pose_images;
      total_loss(ce.loss, fwd.pose_loss, config.alpha);
      model.backward(fwd, gradV.cast<float>(), head ? config.alpha : 0.0);
      optimizer.step(params);
      stats.add(s);
      if (hooks.after_step) hooks.after_step(model);
    }
    emit(hooks, stats.row(epoch + 1, "train"));
    validate_epoch(model, data, config, hooks, selector, epoch + 1);
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      checkpoint(hooks, epoch_tag("epoch", epoch + 1), model);
  }
  selector.restore(model);
  model.finish_base_training();
  checkpoint(hooks, "base-final", model);
}

void generator_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  const GeneratorSpec& g = config.generator;
  const auto& classes = model.spec().base_classes;
  const int wanted = g.fake_novel + g.fake_base;
  if (static_cast<int>(classes.size()) < wanted || g.fake_novel > static_cast<int>(classes.size()))
    throw std::invalid_argument("dynamic stage 2 needs " + std::to_string(wanted) + " base classes (" +
                                std::to_string(g.fake_novel) + " fake-novel + " +
                                std::to_string(g.fake_base) + " base), have " +
                                std::to_string(classes.size()));
  require(g.shots > 0 && g.shots < g.images_per_class, "dynamic stage 2: shots must be below images_per_class");
  model.freeze_features();

  const MatrixD features = model.embed(data.repre).cast<double>();
  std::map<int, std::vector<Eigen::Index>> by_class;
  for (std::size_t i = 0; i < data.repre.size(); ++i)
    by_class[data.repre[i]->class_id].push_back(static_cast<Eigen::Index>(i));
  for (int c : classes)
    if (static_cast<int>(by_class[c].size()) < g.images_per_class)
      throw std::invalid_argument("dynamic stage 2: base class " + std::to_string(c) + " has fewer than " +
                                  std::to_string(g.images_per_class) + " images");

  const MatrixD base_w = model.classifier_weight.value.cast<double>();
  const double scale = model.cosine_scale.value(0, 0);
  nn::Param<double> A("generator.weight", 0, 0);
  A.value = model.generator.value.cast<double>();
  A.grad = MatrixD::Zero(A.value.rows(), A.value.cols());
  nn::OptimizerSpec opt;
  opt.kind = nn::OptimizerKind::adam;
  opt.learning_rate = g.learning_rate;
  nn::Optimizer<double> adam(opt);
  std::mt19937_64 rng(config.seed ^ 0x6E4E7A7EULL);
  const int steps = static_cast<int>(std::max<std::size_t>(
      1, (data.repre.size() + std::size_t(wanted * g.images_per_class) - 1) / std::size_t(wanted * g.images_per_class)));

  std::vector<int> class_order(classes.begin(), classes.end());
  const auto rows = label_index(classes);
  Selector selector;
  const int val_every = config.schedule.validate_every;
  for (int epoch = 0; epoch < g.epochs; ++epoch) {
    EpochStats stats;
    for (int step = 0; step < steps; ++step) {
      std::shuffle(class_order.begin(), class_order.end(), rng);
      // first fake_novel classes are treated as novel; the rest keep their base weights
      std::vector<int> support_labels, query_labels;
      std::vector<Eigen::Index> support_cols, query_cols;
      for (int k = 0; k < wanted; ++k) {
        std::vector<Eigen::Index> pool = by_class[class_order[static_cast<std::size_t>(k)]];
        std::shuffle(pool.begin(), pool.end(), rng);
        const int label = k < g.fake_novel ? k : -1;
        for (int i = 0; i < g.images_per_class; ++i) {
          if (k < g.fake_novel && i < g.shots) {
            support_cols.push_back(pool[static_cast<std::size_t>(i)]);
            support_labels.push_back(label);
          } else {
            query_cols.push_back(pool[static_cast<std::size_t>(i)]);
            query_labels.push_back(label);
          }
        }
      }
      // base rows: every base class not drawn as fake-novel
      std::vector<int> base_rows;
      std::map<int, int> base_label;
      for (std::size_t k = std::size_t(g.fake_novel); k < class_order.size(); ++k) {
        base_label[class_order[k]] = g.fake_novel + static_cast<int>(base_rows.size());
        base_rows.push_back(rows.at(class_order[k]));
      }
      for (std::size_t j = 0; j < query_labels.size(); ++j) {
        if (query_labels[j] >= 0) continue;
        query_labels[j] = base_label.at(data.repre[static_cast<std::size_t>(query_cols[j])]->class_id);
      }
      MatrixD S(features.rows(), static_cast<Eigen::Index>(support_cols.size()));
      for (std::size_t j = 0; j < support_cols.size(); ++j) S.col(static_cast<Eigen::Index>(j)) = features.col(support_cols[j]);
      MatrixD Q(features.rows(), static_cast<Eigen::Index>(query_cols.size()));
      for (std::size_t j = 0; j < query_cols.size(); ++j) Q.col(static_cast<Eigen::Index>(j)) = features.col(query_cols[j]);

      const Vector<double> norms = S.colwise().norm().transpose().cwiseMax(kNormFloor);
      const MatrixD means = class_means((S.array().rowwise() / norms.transpose().array()).matrix(),
                                        support_labels, g.fake_novel);
      MatrixD W(g.fake_novel + static_cast<Eigen::Index>(base_rows.size()), features.rows());
      W.topRows(g.fake_novel) = (A.value * means).transpose();
      for (std::size_t r = 0; r < base_rows.size(); ++r)
        W.row(g.fake_novel + static_cast<Eigen::Index>(r)) = base_w.row(base_rows[r]);

      CrossEntropy ce;
      MatrixD gW;
      if (g.cosine) {
        ce = cross_entropy(cosine_logits(W, Q, scale), query_labels);
        gW = cosine_backward(W, Q, scale, ce.grad).grad_weights;
      } else {
        ce = cross_entropy(W * Q, query_labels);
        gW = ce.grad * Q.transpose();
      }
      // w_k = A m_k  =>  dA = sum_k dw_k m_k^T
      A.grad = gW.topRows(g.fake_novel).transpose() * means.transpose();
      adam.step({&A});
      model.generator.value = A.value.cast<float>();
      StepStats s;
      s.loss_fewshot = ce.loss;
      s.accuracy = ce.accuracy;
      stats.add(s);
      if (hooks.after_step) hooks.after_step(model);
    }
    emit(hooks, stats.row(epoch + 1, "generator"));
    if (val_every > 0 && !data.val_refer.empty() && ((epoch + 1) % val_every == 0 || epoch + 1 == g.epochs)) {
      MetricsRow row;
      row.epoch = epoch + 1;
      row.split = "val";
      row.accuracy = validation_accuracy(model, data.val_refer, data.val_query, config);
      emit(hooks, row);
      selector.offer(row.accuracy, model);
    }
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0)
      checkpoint(hooks, epoch_tag("generator-epoch", epoch + 1), model);
  }
  selector.restore(model);
  checkpoint(hooks, "generator-final", model);
}

}  // namespace

void proto_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  episodic_train(model, data, config, hooks, {});
}

void multitask_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  if (model.spec().aggregator != Aggregator::avg_multitask)
    throw std::invalid_argument("multitask_train requires the avg_multitask aggregator");
  episodic_train(model, data, config, hooks, {});
}

void transfer_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  if (model.spec().algorithm != Algorithm::transfer)
    throw std::invalid_argument("transfer_train requires the transfer algorithm");
  classifier_train(model, data, config, hooks, false);
}

void transfer_finetune(Model& model, std::span<const SamplePtr> refer, const TrainConfig& config,
                       const TrainHooks& hooks) {
  if (!model.base_trained) throw std::logic_error("transfer_finetune: base training has not finished");
  model.freeze_features();
  const std::vector<int> classes = sorted_classes(refer);
  const auto index = label_index(classes);
  std::vector<int> labels;
  for (const auto& s : refer) labels.push_back(index.at(s->class_id));
  std::vector<double> losses;
  const LinearFit fit = fit_linear(model.embed(refer).cast<double>(), labels, static_cast<int>(classes.size()),
                                   config.finetune, config.seed ^ 0xF1E7E7ULL, &losses);
  for (std::size_t e = 0; e < losses.size(); ++e) {
    MetricsRow row;
    row.epoch = static_cast<int>(e) + 1;
    row.split = "finetune";
    row.loss_fewshot = losses[e];
    emit(hooks, row);
  }
  model.novel_weight = nn::Param<float>("novel.weight", fit.weight.rows(), fit.weight.cols());
  model.novel_bias = nn::Param<float>("novel.bias", fit.bias.size(), 1);
  model.novel_weight.value = fit.weight.cast<float>();
  model.novel_bias.value = fit.bias.cast<float>();
  model.novel_classes = classes;
  checkpoint(hooks, "finetune-final", model);
}

void dynamic_train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  if (model.spec().algorithm != Algorithm::dynamic)
    throw std::invalid_argument("dynamic_train requires the dynamic algorithm");
  const GeneratorSpec& g = config.generator;
  if (g.fake_novel > static_cast<int>(model.spec().base_classes.size()))
    throw std::invalid_argument("dynamic: fewer base classes than fake-novel classes requested");
  classifier_train(model, data, config, hooks, g.cosine);
  generator_train(model, data, config, hooks);
}

void train_with_disjoint_pose(Model& model, const BaseData& classify, std::span<const SamplePtr> pose_set,
                              const TrainConfig& config, const TrainHooks& hooks) {
  if (!model.has_pose_head())
    throw std::invalid_argument("disjoint pose training needs a model with a pose head");
  if (pose_set.empty()) throw std::invalid_argument("disjoint pose training: empty pose set");
  for (const auto& s : pose_set) {
    const bool ok = model.spec().aggregator == Aggregator::bbn ? s->bbox.has_value() : s->keypoints.has_value();
    if (!ok) throw std::invalid_argument("pose set image " + std::to_string(s->id) + " lacks annotations");
  }
  episodic_train(model, classify, config, hooks, pose_set);
}

void train(Model& model, const BaseData& data, const TrainConfig& config, const TrainHooks& hooks) {
  switch (model.spec().algorithm) {
    case Algorithm::proto:
      if (model.spec().aggregator == Aggregator::avg_multitask)
        multitask_train(model, data, config, hooks);
      else
        proto_train(model, data, config, hooks);
      return;
    case Algorithm::transfer:
      transfer_train(model, data, config, hooks);
      return;
    case Algorithm::dynamic:
      dynamic_train(model, data, config, hooks);
      return;
  }
}

MatrixD adapt_and_score(Model& model, const MatrixD& refer_features, std::span<const int> refer_labels,
                        int n_classes, const MatrixD& query_features, const TrainConfig& config,
                        std::uint64_t seed) {
  switch (model.spec().algorithm) {
    case Algorithm::proto:
      return proto_logits(class_means(refer_features, refer_labels, n_classes), query_features);
    case Algorithm::transfer: {
      const LinearFit fit = fit_linear(refer_features, refer_labels, n_classes, config.finetune, seed);
      MatrixD logits = fit.weight * query_features;
      logits.colwise() += fit.bias;
      return logits;
    }
    case Algorithm::dynamic: {
      const MatrixD W = generate_weights(model.generator.value.cast<double>(), refer_features, refer_labels, n_classes);
      return config.generator.cosine ? cosine_logits(W, query_features, model.cosine_scale.value(0, 0))
                                     : MatrixD(W * query_features);
    }
  }
  return {};
}

double validation_accuracy(Model& model, std::span<const SamplePtr> refer, std::span<const SamplePtr> query,
                           const TrainConfig& config) {
  const std::vector<int> classes = sorted_classes(refer);
  const auto index = label_index(classes);
  std::vector<int> rl, ql;
  for (const auto& s : refer) rl.push_back(index.at(s->class_id));
  for (const auto& s : query) ql.push_back(index.at(s->class_id));
  const MatrixD scores = adapt_and_score(model, model.embed(refer).cast<double>(), rl, static_cast<int>(classes.size()),
                                         model.embed(query).cast<double>(), config, config.seed);
  const auto pred = argmax_columns(scores);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ql[i];
  return pred.empty() ? 0.0 : 100.0 * correct / double(pred.size());
}

}  // namespace posenorm
