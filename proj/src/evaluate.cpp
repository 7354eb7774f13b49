#include "posenorm/evaluate.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace posenorm {

namespace {

using json = nlohmann::json;

std::map<int, int> class_index(std::span<const int> classes) {
  std::map<int, int> out;
  for (int c : classes) out.emplace(c, 0);
  int i = 0;
  for (auto& [_, idx] : out) idx = i++;
  return out;
}

struct TrialResult {
  std::vector<int> predicted;  ///< dataset class id per query
};

TrialResult score_trial(Model& model, const MatrixD& refer, std::span<const int> refer_classes,
                        const MatrixD& query, const std::map<int, int>& index, const std::vector<int>& ids,
                        const TrainConfig& config, std::uint64_t seed) {
  std::vector<int> labels;
  labels.reserve(refer_classes.size());
  for (int c : refer_classes) labels.push_back(index.at(c));
  const MatrixD scores = adapt_and_score(model, refer, labels, static_cast<int>(index.size()), query, config, seed);
  TrialResult out;
  for (int k : argmax_columns(scores)) out.predicted.push_back(ids[static_cast<std::size_t>(k)]);
  return out;
}

std::uint64_t trial_seed(std::uint64_t seed, int trial) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(trial)};
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  return (std::uint64_t(words[0]) << 32) | words[1];
}

}  // namespace

std::string shots_name(int shots) { return shots == kAllShots ? "all" : std::to_string(shots); }

int shots_from_string(const std::string& name) {
  if (name == "all") return kAllShots;
  try {
    std::size_t used = 0;
    const int v = std::stoi(name, &used);
    if (used == name.size() && v > 0) return v;
  } catch (const std::exception&) {
  }
  throw std::invalid_argument("invalid shots '" + name + "' (expected a positive integer or 'all')");
}

std::pair<double, double> mean_ci95(std::span<const double> values) {
  if (values.empty()) return {0, 0};
  const double n = double(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return {mean, 0};
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, 1.96 * std::sqrt(ss / (n - 1)) / std::sqrt(n)};
}

FeatureSet embed_set(Model& model, std::span<const SamplePtr> samples) {
  FeatureSet out;
  out.features = model.embed(samples).cast<double>();
  out.samples.assign(samples.begin(), samples.end());
  for (const auto& s : samples) out.classes.push_back(s->class_id);
  return out;
}

EvalReport evaluate_features(Model& model, const FeatureSet& refer, const FeatureSet& query, int shots,
                             int n_trials, std::uint64_t seed, const TrainConfig& config) {
  if (n_trials < 1) throw std::invalid_argument("evaluate: n_trials must be at least 1");
  if (shots < 0) throw std::invalid_argument("evaluate: shots must be positive or all");
  if (refer.classes.empty()) throw std::invalid_argument("evaluate: empty reference set");
  if (query.classes.empty()) throw std::invalid_argument("evaluate: empty query set");
  const auto index = class_index(refer.classes);
  std::vector<int> ids(index.size());
  for (const auto& [c, i] : index) ids[static_cast<std::size_t>(i)] = c;
  for (int c : query.classes)
    if (!index.count(c))
      throw std::invalid_argument("evaluate: query class " + std::to_string(c) + " has no reference images");

  std::map<int, std::vector<Eigen::Index>> by_class;
  for (std::size_t j = 0; j < refer.classes.size(); ++j)
    by_class[refer.classes[j]].push_back(static_cast<Eigen::Index>(j));
  if (shots != kAllShots) {
    std::vector<std::string> short_classes;
    for (const auto& [c, cols] : by_class)
      if (static_cast<int>(cols.size()) < shots)
        short_classes.push_back(std::to_string(c) + " (" + std::to_string(cols.size()) + ")");
    if (!short_classes.empty()) {
      std::string list;
      for (const auto& s : short_classes) list += (list.empty() ? "" : ", ") + s;
      throw std::invalid_argument("evaluate: " + std::to_string(shots) +
                                  "-shot needs that many reference images; short classes: " + list);
    }
  }

  std::map<int, int> query_counts;
  for (int c : query.classes) ++query_counts[c];

  EvalReport report;
  report.shots = shots;
  report.n_trials = n_trials;
  report.seed = seed;
  report.algorithm = to_string(model.spec().algorithm);
  report.aggregator = to_string(model.spec().aggregator);
  report.num_classes = static_cast<int>(index.size());
  report.num_queries = static_cast<int>(query.classes.size());
  std::map<int, double> class_sum;
  std::vector<double> class_means_per_trial;
  for (int t = 0; t < n_trials; ++t) {
    const std::uint64_t ts = trial_seed(seed, t);
    MatrixD ref;
    std::vector<int> ref_classes;
    if (shots == kAllShots) {
      ref = refer.features;
      ref_classes = refer.classes;
    } else {
      std::mt19937_64 rng(ts);
      std::vector<Eigen::Index> cols;
      for (const auto& [c, pool] : by_class) {
        std::vector<Eigen::Index> p = pool;
        std::shuffle(p.begin(), p.end(), rng);
        cols.insert(cols.end(), p.begin(), p.begin() + shots);
        ref_classes.insert(ref_classes.end(), std::size_t(shots), c);
      }
      ref = refer.features(Eigen::all, cols);
    }
    const TrialResult r = score_trial(model, ref, ref_classes, query.features, index, ids, config, ts);
    std::map<int, int> hits;
    int correct = 0;
    for (std::size_t j = 0; j < r.predicted.size(); ++j) {
      if (r.predicted[j] == query.classes[j]) {
        ++correct;
        ++hits[query.classes[j]];
      }
    }
    report.trial_accuracies.push_back(100.0 * correct / double(query.classes.size()));
    double per_class_mean = 0;
    for (const auto& [c, n] : query_counts) {
      const double acc = 100.0 * hits[c] / double(n);
      class_sum[c] += acc;
      per_class_mean += acc;
    }
    class_means_per_trial.push_back(per_class_mean / double(query_counts.size()));
  }
  std::tie(report.mean_accuracy, report.ci95) = mean_ci95(report.trial_accuracies);
  report.mean_per_class_accuracy = mean_ci95(class_means_per_trial).first;
  for (const auto& [c, s] : class_sum) report.per_class_accuracy[c] = s / n_trials;
  return report;
}

EvalReport evaluate_allway(Model& model, std::span<const SamplePtr> refer, std::span<const SamplePtr> query,
                           int shots, int n_trials, std::uint64_t seed, const TrainConfig& config) {
  return evaluate_features(model, embed_set(model, refer), embed_set(model, query), shots, n_trials, seed, config);
}

EvalReport combine_runs(std::span<const EvalReport> runs) {
  if (runs.empty()) throw std::invalid_argument("combine_runs: no reports");
  EvalReport out = runs.front();
  out.trial_accuracies.clear();
  std::vector<double> per_class_means;
  std::map<int, double> sums;
  for (const auto& r : runs) {
    if (r.shots != out.shots) throw std::invalid_argument("combine_runs: reports use different shot counts");
    out.trial_accuracies.push_back(r.mean_accuracy);
    per_class_means.push_back(r.mean_per_class_accuracy);
    for (const auto& [c, a] : r.per_class_accuracy) sums[c] += a;
  }
  std::tie(out.mean_accuracy, out.ci95) = mean_ci95(out.trial_accuracies);
  out.mean_per_class_accuracy = mean_ci95(per_class_means).first;
  out.per_class_accuracy.clear();
  for (const auto& [c, s] : sums) out.per_class_accuracy[c] = s / double(runs.size());
  out.n_trials = static_cast<int>(runs.size());
  return out;
}

// ---- part analyses -------------------------------------------------------

MatrixD zero_part_block(const MatrixD& features, int part, Eigen::Index block) {
  MatrixD out = features;
  out.middleRows(Eigen::Index(part) * block, block).setZero();
  return out;
}

namespace {

Eigen::Index part_block(const Model& model) {
  const Layout l = model.layout();
  if (l != Layout::pose && l != Layout::upn && l != Layout::bbn)
    throw std::invalid_argument("part analysis requires a part-based aggregator (pose, pose_gt, upn, bbn), got " +
                                to_string(model.spec().aggregator));
  return model.feature_dim() / model.attention_parts();
}

}  // namespace

std::map<int, std::vector<double>> part_importance_table(Model& model, const FeatureSet& refer,
                                                         const FeatureSet& query, const TrainConfig& config,
                                                         std::uint64_t seed) {
  const Eigen::Index block = part_block(model);
  const int parts = model.attention_parts();
  const EvalReport full = evaluate_features(model, refer, query, kAllShots, 1, seed, config);
  std::map<int, std::vector<double>> table;
  for (const auto& [c, _] : full.per_class_accuracy) table[c].assign(static_cast<std::size_t>(parts), 0.0);
  for (int i = 0; i < parts; ++i) {
    FeatureSet r = refer, q = query;
    r.features = zero_part_block(refer.features, i, block);
    q.features = zero_part_block(query.features, i, block);
    const EvalReport dropped = evaluate_features(model, r, q, kAllShots, 1, seed, config);
    for (auto& [c, drops] : table)
      drops[static_cast<std::size_t>(i)] = full.per_class_accuracy.at(c) - dropped.per_class_accuracy.at(c);
  }
  return table;
}

std::map<int, std::vector<double>> part_importance_table(Model& model, std::span<const SamplePtr> refer,
                                                         std::span<const SamplePtr> query,
                                                         const TrainConfig& config, std::uint64_t seed) {
  part_block(model);
  return part_importance_table(model, embed_set(model, refer), embed_set(model, query), config, seed);
}

std::vector<double> part_importance(Model& model, std::span<const SamplePtr> refer,
                                    std::span<const SamplePtr> query, int class_id,
                                    const TrainConfig& config, std::uint64_t seed) {
  part_block(model);
  if (std::none_of(query.begin(), query.end(), [&](const SamplePtr& s) { return s->class_id == class_id; }))
    throw std::invalid_argument("part_importance: class " + std::to_string(class_id) + " has no query images");
  return part_importance_table(model, refer, query, config, seed).at(class_id);
}

void write_part_importance(const std::filesystem::path& path, const std::map<int, std::vector<double>>& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "class_id,part,drop\n";
  out.precision(17);
  for (const auto& [c, drops] : table)
    for (std::size_t i = 0; i < drops.size(); ++i) out << c << ',' << i << ',' << drops[i] << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Neighbor> rank_part_neighbors(const Vector<double>& query, const FeatureSet& refer, int query_class,
                                          int part_index, Eigen::Index block, int k) {
  const Eigen::Index parts = block > 0 ? query.size() / block : 0;
  if (part_index < 0 || part_index >= parts)
    throw std::out_of_range("part_index " + std::to_string(part_index) + " outside [0, " + std::to_string(parts) + ")");
  if (k < 1 || k > static_cast<int>(refer.samples.size()))
    throw std::invalid_argument("k must be in [1, " + std::to_string(refer.samples.size()) + "], got " +
                                std::to_string(k));
  const auto q = query.segment(Eigen::Index(part_index) * block, block);
  const double qn = std::max(q.norm(), 1e-12);
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t j = 0; j < refer.samples.size(); ++j) {
    const auto r = refer.features.col(static_cast<Eigen::Index>(j)).segment(Eigen::Index(part_index) * block, block);
    scored.emplace_back(q.dot(r) / (qn * std::max(r.norm(), 1e-12)), j);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Neighbor> out;
  for (int i = 0; i < k; ++i) {
    const auto [sim, j] = scored[static_cast<std::size_t>(i)];
    out.push_back({refer.samples[j], sim, refer.classes[j] == query_class});
  }
  return out;
}

std::vector<Neighbor> nearest_part_neighbors(Model& model, const SamplePtr& query_sample, int part_index,
                                             std::span<const SamplePtr> refer, int k) {
  const Eigen::Index block = part_block(model);
  const FeatureSet ref = embed_set(model, refer);
  const SamplePtr one[] = {query_sample};
  const Vector<double> q = model.embed(one).cast<double>().col(0);
  return rank_part_neighbors(q, ref, query_sample->class_id, part_index, block, k);
}

// ---- report serialisation ------------------------------------------------

void write_eval_report(const std::filesystem::path& path, const EvalReport& r) {
  json j;
  j["schema"] = kEvalReportSchema;
  j["version"] = kEvalReportVersion;
  j["shots"] = shots_name(r.shots);
  j["mean_accuracy"] = r.mean_accuracy;
  j["mean_per_class_accuracy"] = r.mean_per_class_accuracy;
  j["ci95"] = r.ci95;
  j["n_trials"] = r.n_trials;
  j["seed"] = r.seed;
  j["config_hash"] = r.config_hash;
  j["algorithm"] = r.algorithm;
  j["aggregator"] = r.aggregator;
  j["num_classes"] = r.num_classes;
  j["num_queries"] = r.num_queries;
  json pc = json::object();
  for (const auto& [c, a] : r.per_class_accuracy) pc[std::to_string(c)] = a;
  j["per_class_accuracy"] = pc;
  j["trial_accuracies"] = r.trial_accuracies;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

EvalReport read_eval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  if (j.value("schema", "") != kEvalReportSchema)
    throw std::runtime_error(path.string() + ": not an eval report");
  if (j.value("version", 0) != kEvalReportVersion)
    throw std::runtime_error(path.string() + ": unsupported report version " + j["version"].dump());
  EvalReport r;
  r.shots = shots_from_string(j.at("shots").get<std::string>());
  r.mean_accuracy = j.at("mean_accuracy").get<double>();
  r.mean_per_class_accuracy = j.at("mean_per_class_accuracy").get<double>();
  r.ci95 = j.at("ci95").get<double>();
  r.n_trials = j.at("n_trials").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.algorithm = j.at("algorithm").get<std::string>();
  r.aggregator = j.at("aggregator").get<std::string>();
  r.num_classes = j.at("num_classes").get<int>();
  r.num_queries = j.at("num_queries").get<int>();
  for (const auto& [k, v] : j.at("per_class_accuracy").items()) r.per_class_accuracy[std::stoi(k)] = v.get<double>();
  r.trial_accuracies = j.at("trial_accuracies").get<std::vector<double>>();
  return r;
}

}  // namespace posenorm
