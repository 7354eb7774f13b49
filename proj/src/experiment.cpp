#include "posenorm/experiment.hpp"

#include "posenorm/checkpoint.hpp"
#include "posenorm/dataset_io.hpp"
#include "posenorm/plots.hpp"
#include "posenorm/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace posenorm {

namespace {

std::vector<SamplePtr> fit_to_input(std::vector<SamplePtr> samples, int side) {
  for (auto& s : samples)
    if (s->image.height != side || s->image.width != side)
      s = std::make_shared<const ImageSample>(resize_sample(*s, side));
  return samples;
}

std::string cell(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

double parse_cell(const std::string& s) {
  return s.empty() ? std::numeric_limits<double>::quiet_NaN() : std::stod(s);
}

std::string fraction_dir(double f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "fraction_%.2f", f);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text << "\n";
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

DatasetBundle load_bundle(const RunConfig& config) {
  const int side = config.model.backbone.input_size;
  if (config.data.source == "synthetic") {
    SyntheticConfig sc = config.data.synthetic;
    sc.reference_fraction = config.data.reference_fraction;
    auto samples = fit_to_input(gen_synthetic_samples(sc, config.seed), side);
    return make_bundle(std::move(samples), sc.num_parts, sc.reference_fraction, config.seed);
  }
  if (config.data.root.empty())
    throw std::invalid_argument(std::string("data.root is empty (set it in the config or via ") + kDataRootEnv + ")");
  LoadedDataset d = load_dataset(config.data.root, side);
  return make_bundle(std::move(d.samples), d.num_parts, config.data.reference_fraction, config.seed);
}

std::vector<SamplePtr> load_pose_set(const RunConfig& config) {
  if (config.data.pose_root.empty()) return {};
  return load_dataset(config.data.pose_root, config.model.backbone.input_size).samples;
}

ModelSpec resolved_spec(const RunConfig& config, const DatasetBundle& bundle) {
  ModelSpec spec = config.model;
  spec.base_classes.assign(bundle.split.base.begin(), bundle.split.base.end());
  const bool needs_parts = spec.aggregator == Aggregator::pose || spec.aggregator == Aggregator::pose_gt ||
                           spec.aggregator == Aggregator::avg_multitask;
  if (needs_parts) {
    if (bundle.num_parts <= 0) throw std::invalid_argument("aggregator " + to_string(spec.aggregator) +
                                                           " needs part annotations, the dataset has none");
    spec.num_parts = bundle.num_parts;
  }
  return spec;
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path) {
  std::ofstream out(path_);
  out << "epoch,split,loss_fewshot,loss_pose,accuracy\n";
  if (!out) throw std::runtime_error("cannot write " + path_.string());
}

void MetricsLog::append(const MetricsRow& row) {
  std::ofstream out(path_, std::ios::app);
  out << row.epoch << ',' << row.split << ',' << cell(row.loss_fewshot) << ',' << cell(row.loss_pose) << ','
      << cell(row.accuracy) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path_.string());
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,split,loss_fewshot,loss_pose,accuracy") throw std::runtime_error(path.string() + ": bad header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells(1);
    for (char c : line) {
      if (c == ',')
        cells.emplace_back();
      else
        cells.back() += c;
    }
    if (cells.size() != 5) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    MetricsRow r;
    r.epoch = std::stoi(cells[0]);
    r.split = cells[1];
    r.loss_fewshot = parse_cell(cells[2]);
    r.loss_pose = parse_cell(cells[3]);
    r.accuracy = parse_cell(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

void write_resolved_config(const std::filesystem::path& out_dir, const RunConfig& config) {
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "resolved_config.json", to_json(config));
}

TrainOutcome train_run(const RunConfig& config, const DatasetBundle& bundle,
                       const std::optional<std::filesystem::path>& out_dir) {
  TrainOutcome outcome;
  outcome.model = std::make_unique<Model>(resolved_spec(config, bundle), config.seed);
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;

  std::optional<MetricsLog> log;
  const std::string config_json = to_json(config);
  if (out_dir) {
    write_resolved_config(*out_dir, config);
    std::filesystem::create_directories(*out_dir / "checkpoints");
    log.emplace(*out_dir / "metrics.csv");
  }
  TrainHooks hooks;
  hooks.on_metrics = [&](const MetricsRow& row) {
    outcome.metrics.push_back(row);
    if (log) log->append(row);
  };
  if (out_dir)
    hooks.on_checkpoint = [&](const std::string& tag, Model& model) {
      save_checkpoint(*out_dir / "checkpoints" / (tag + ".ckpt"), model, tag, config_json);
    };

  const BaseData data{bundle.repre, bundle.refer_of(bundle.split.validation), bundle.query_of(bundle.split.validation)};
  if (!config.data.pose_root.empty()) {
    const auto pose_set = load_pose_set(config);
    train_with_disjoint_pose(*outcome.model, data, pose_set, train_config, hooks);
  } else {
    train(*outcome.model, data, train_config, hooks);
  }
  return outcome;
}

std::vector<EvalReport> eval_run(const RunConfig& config, Model& model, const DatasetBundle& bundle) {
  const auto refer = bundle.refer_of(bundle.split.novel);
  const auto query = bundle.query_of(bundle.split.novel);
  if (refer.empty() || query.empty()) throw std::invalid_argument("dataset has no novel reference/query images");
  TrainConfig train_config = config.train;
  train_config.seed = config.seed;
  const std::string hash = config_hash(config);
  const FeatureSet r = embed_set(model, refer), q = embed_set(model, query);
  std::vector<EvalReport> reports;
  for (const auto& name : config.eval.shots) {
    const int shots = shots_from_string(name);
    const int trials = shots == kAllShots ? config.eval.all_shot_passes : config.eval.n_trials;
    EvalReport report = evaluate_features(model, r, q, shots, trials, config.seed, train_config);
    report.config_hash = hash;
    reports.push_back(std::move(report));
  }
  return reports;
}

void write_reports(const std::filesystem::path& out_dir, const std::vector<EvalReport>& reports) {
  std::filesystem::create_directories(out_dir / "reports");
  for (const auto& r : reports) write_eval_report(out_dir / "reports" / ("eval_" + shots_name(r.shots) + ".json"), r);
}

std::vector<PckPoint> pck_run(const RunConfig& config, Model& model, const DatasetBundle& bundle) {
  if (!model.has_pose_head()) throw std::invalid_argument("PCK requires a model with a pose head");
  std::vector<SamplePtr> samples;
  for (const auto& s : bundle.query_of(bundle.split.novel))
    if (s->bbox && s->keypoints) samples.push_back(s);
  if (samples.empty()) throw std::invalid_argument("PCK requires part and box annotations on novel query images");
  const auto thresholds = config.eval.pck_thresholds.empty() ? default_pck_thresholds() : config.eval.pck_thresholds;
  return pck_curve(model.predict_heatmaps(samples), samples, thresholds);
}

RunConfig sweep_point_config(const RunConfig& config, double fraction) {
  RunConfig c = config;
  c.train.annotation_fraction = fraction;
  c.train.predicted_attention = true;
  c.train.pose_batch_per_class = 0;
  c.eval.shots = {"all"};
  return c;
}

std::vector<SweepPoint> sweep_run(const RunConfig& config, const DatasetBundle& bundle,
                                  const std::filesystem::path& out_dir, const std::optional<EvalReport>& baseline) {
  if (config.eval.fractions.empty()) throw std::invalid_argument("sweep: no fractions configured");
  std::filesystem::create_directories(out_dir);
  write_resolved_config(out_dir, config);
  std::vector<SweepPoint> points;
  for (double f : config.eval.fractions) {
    const auto dir = out_dir / fraction_dir(f);
    std::vector<EvalReport> runs;
    for (int run = 0; run < config.eval.runs; ++run) {
      RunConfig c = sweep_point_config(config, f);
      c.seed = config.seed + static_cast<std::uint64_t>(run);
      const auto run_dir = config.eval.runs == 1 ? dir : dir / ("run_" + std::to_string(run));
      TrainOutcome t = train_run(c, bundle, run_dir);
      auto reports = eval_run(c, *t.model, bundle);
      write_reports(run_dir, reports);
      runs.push_back(reports.front());
    }
    EvalReport combined = runs.size() == 1 ? runs.front() : combine_runs(runs);
    write_eval_report(dir / "report.json", combined);
    points.push_back({f, combined});
  }
  std::vector<std::pair<double, EvalReport>> curve;
  for (const auto& p : points) curve.emplace_back(p.fraction, p.report);
  write_figure(out_dir, "fraction_curve", accuracy_vs_fraction(curve, baseline));
  return points;
}

}  // namespace posenorm
