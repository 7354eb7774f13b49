#include "posenorm/cli.hpp"

#include "posenorm/checkpoint.hpp"
#include "posenorm/dataset_io.hpp"
#include "posenorm/experiment.hpp"
#include "posenorm/plots.hpp"
#include "posenorm/synthetic.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace posenorm {

namespace {

namespace fs = std::filesystem;

struct ConfigArgs {
  std::string config_path;
  std::string preset;
  std::vector<std::string> sets;
  std::string out;
  long long seed = -1;
};

void add_config_options(CLI::App* app, ConfigArgs& a) {
  app->add_option("-c,--config", a.config_path, "JSON run config");
  app->add_option("-p,--preset", a.preset, "named preset (replaces the config's preset)");
  app->add_option("-s,--set", a.sets, "override, dotted.key=value (repeatable, last wins)");
  app->add_option("-o,--out", a.out, "output directory (out_dir)");
  app->add_option("--seed", a.seed, "run seed");
}

/// Config from flags; `fallback_json` (for example a checkpoint's embedded
/// config) is used when neither a file nor a preset is given.
RunConfig resolve(const ConfigArgs& a, const std::string& fallback_json = "") {
  std::vector<std::string> overrides = a.sets;
  if (!a.out.empty()) overrides.insert(overrides.begin(), "out_dir=" + nlohmann::json(a.out).dump());
  if (a.seed >= 0) overrides.insert(overrides.begin(), "seed=" + std::to_string(a.seed));
  if (!a.config_path.empty()) return load_config(a.config_path, overrides, a.preset);
  if (!a.preset.empty()) return resolve_config("", overrides, a.preset);
  return resolve_config(fallback_json, overrides);
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

std::string format_report(const EvalReport& r) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << "shots=" << shots_name(r.shots) << " accuracy=" << r.mean_accuracy
    << " per_class=" << r.mean_per_class_accuracy << " ci95=" << r.ci95 << " trials=" << r.n_trials
    << " classes=" << r.num_classes;
  return s.str();
}

int cmd_synth_gen(const ConfigArgs& a, std::ostream& out) {
  RunConfig c = a.preset.empty() && a.config_path.empty() ? resolve(a, R"({"data": {"source": "synthetic"}})") : resolve(a);
  const fs::path dir = c.out_dir;
  SyntheticConfig sc = c.data.synthetic;
  sc.reference_fraction = c.data.reference_fraction;
  const auto samples = gen_synthetic_samples(sc, c.seed);
  write_dataset(dir, samples, sc.num_parts);
  std::ofstream(dir / "dataset.json") << nlohmann::json{{"num_parts", sc.num_parts}}.dump() << "\n";
  write_resolved_config(dir, c);
  out << "wrote " << samples.size() << " images (" << sc.num_classes << " classes) to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& a, std::ostream& out) {
  const RunConfig c = resolve(a);
  const DatasetBundle bundle = load_bundle(c);
  TrainOutcome t = train_run(c, bundle, fs::path(c.out_dir));
  out << "trained " << to_string(c.model.algorithm) << "+" << to_string(c.model.aggregator) << " for "
      << c.train.schedule.total_epochs() << " epochs; outputs in " << c.out_dir << "\n";
  return 0;
}

struct ModelArgs {
  std::string checkpoint;
  bool init = false;
};

LoadedCheckpoint model_for(const ModelArgs& m, const RunConfig& c, const DatasetBundle& bundle) {
  if (m.init) {
    LoadedCheckpoint l;
    l.model = std::make_unique<Model>(resolved_spec(c, bundle), c.seed);
    l.model->finish_base_training();
    l.info.tag = "init";
    return l;
  }
  if (m.checkpoint.empty()) throw std::invalid_argument("no checkpoint given (use --checkpoint PATH or --init)");
  return load_checkpoint(m.checkpoint);
}

RunConfig config_for(const ConfigArgs& a, const ModelArgs& m) {
  if (!m.init && !m.checkpoint.empty() && a.config_path.empty() && a.preset.empty())
    return resolve(a, read_checkpoint_info(m.checkpoint).config);
  if (!m.init && m.checkpoint.empty()) throw std::invalid_argument("no checkpoint given (use --checkpoint PATH or --init)");
  return resolve(a);
}

int cmd_eval(const ConfigArgs& a, const ModelArgs& m, const std::vector<std::string>& shots, std::ostream& out) {
  RunConfig c = config_for(a, m);
  if (!shots.empty()) c.eval.shots = shots;
  const DatasetBundle bundle = load_bundle(c);
  LoadedCheckpoint loaded = model_for(m, c, bundle);
  const auto reports = eval_run(c, *loaded.model, bundle);
  write_resolved_config(c.out_dir, c);
  write_reports(c.out_dir, reports);
  for (const auto& r : reports) out << format_report(r) << "\n";
  return 0;
}

int cmd_analyze(const ConfigArgs& a, const ModelArgs& m, const std::vector<std::string>& report_dirs, int heatmaps,
                std::ostream& out) {
  const RunConfig c = config_for(a, m);
  const DatasetBundle bundle = load_bundle(c);
  LoadedCheckpoint loaded = model_for(m, c, bundle);
  Model& model = *loaded.model;
  const fs::path dir = fs::path(c.out_dir) / "analysis";
  fs::create_directories(dir);
  write_resolved_config(dir, c);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const auto refer = bundle.refer_of(bundle.split.novel), query = bundle.query_of(bundle.split.novel);
  int written = 0;

  if (model.has_pose_head()) {
    const auto curve = pck_run(c, model, bundle);
    write_pck_table(dir / "pck.csv", curve);
    write_figure(dir, "pck_plot", pck_vs_threshold({{to_string(c.model.aggregator), curve}}));
    fs::create_directories(dir / "heatmaps");
    const int n = std::min<int>(heatmaps, static_cast<int>(query.size()));
    const auto maps = model.predict_heatmaps(std::span(query).first(static_cast<std::size_t>(n)));
    for (int i = 0; i < n; ++i)
      write_heatmap_image(dir / "heatmaps" / ("query_" + std::to_string(query[i]->id) + ".png"), *query[i], maps[i]);
    for (const auto& p : curve)
      if (std::abs(p.threshold - 0.1) < 1e-12) out << "pck@0.1=" << p.accuracy << "\n";
    written += 2;
  }

  if (model.attention_parts() > 0) {
    const FeatureSet r = embed_set(model, refer), q = embed_set(model, query);
    write_part_importance(dir / "part_importance.csv", part_importance_table(model, r, q, tc, c.seed));
    std::ofstream nb(dir / "neighbors.csv");
    nb << "query_id,query_class,part,rank,neighbor_id,neighbor_class,similarity,same_class\n" << std::setprecision(17);
    const Eigen::Index block = model.feature_dim() / model.attention_parts();
    const int nq = std::min<int>(c.eval.neighbor_queries, static_cast<int>(query.size()));
    for (int i = 0; i < nq; ++i) {
      const std::size_t qi = static_cast<std::size_t>(i) * query.size() / static_cast<std::size_t>(std::max(nq, 1));
      for (int part = 0; part < model.attention_parts(); ++part) {
        const auto hits = rank_part_neighbors(q.features.col(static_cast<Eigen::Index>(qi)), r, q.classes[qi], part,
                                              block, std::min<int>(c.eval.neighbors_k, static_cast<int>(refer.size())));
        for (std::size_t k = 0; k < hits.size(); ++k)
          nb << query[qi]->id << ',' << query[qi]->class_id << ',' << part << ',' << k + 1 << ',' << hits[k].sample->id
             << ',' << hits[k].sample->class_id << ',' << hits[k].similarity << ',' << (hits[k].same_class ? 1 : 0)
             << '\n';
      }
    }
    if (!nb) throw std::runtime_error("cannot write " + (dir / "neighbors.csv").string());
    written += 2;
  }

  if (!report_dirs.empty()) {
    std::map<std::string, std::vector<EvalReport>> groups;
    for (const auto& rd : report_dirs) {
      if (!fs::is_directory(rd)) throw std::invalid_argument("report directory not found: " + rd);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(rd))
        if (e.path().extension() == ".json") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        const EvalReport r = read_eval_report(f);
        groups[r.algorithm + "+" + r.aggregator].push_back(r);
      }
    }
    if (groups.empty()) throw std::invalid_argument("no eval reports found in the given directories");
    write_figure(dir, "accuracy_vs_shots", accuracy_vs_shots(groups));
    ++written;
  }
  if (written == 0)
    throw std::invalid_argument("nothing to analyze: the model has no pose head or part layout and no --reports were given");
  out << "analysis written to " << dir.string() << "\n";
  return 0;
}

int cmd_sweep(const ConfigArgs& a, bool with_baseline, std::ostream& out) {
  const RunConfig c = resolve(a);
  const DatasetBundle bundle = load_bundle(c);
  const fs::path dir = c.out_dir;
  std::optional<EvalReport> baseline;
  if (with_baseline) {
    RunConfig b = c;
    b.model.aggregator = Aggregator::avg;
    b.eval.shots = {"all"};
    TrainOutcome t = train_run(b, bundle, dir / "baseline");
    baseline = eval_run(b, *t.model, bundle).front();
    write_reports(dir / "baseline", {*baseline});
  }
  const auto points = sweep_run(c, bundle, dir, baseline);
  for (const auto& p : points) out << "fraction=" << p.fraction << " " << format_report(p.report) << "\n";
  if (baseline) out << "baseline " << format_report(*baseline) << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-normalized few-shot fine-grained recognition"};
  app.require_subcommand(1);
  ConfigArgs args;
  ModelArgs margs;
  std::vector<std::string> shots, report_dirs;
  bool with_baseline = false;
  int heatmaps = 4;

  auto* synth = app.add_subcommand("synth-gen", "write a synthetic part-annotated dataset");
  add_config_options(synth, args);
  auto* train = app.add_subcommand("train", "base training; writes checkpoints and a metrics log");
  add_config_options(train, args);
  auto* eval = app.add_subcommand("eval", "all-way evaluation on novel classes");
  add_config_options(eval, args);
  eval->add_option("--checkpoint", margs.checkpoint, "checkpoint to evaluate");
  eval->add_flag("--init", margs.init, "evaluate a freshly initialized model");
  eval->add_option("--shots", shots, "shot settings (1, 5, all)")->delimiter(',');
  auto* analyze = app.add_subcommand("analyze", "PCK, part importance, neighbours and plots");
  add_config_options(analyze, args);
  analyze->add_option("--checkpoint", margs.checkpoint, "checkpoint to analyze");
  analyze->add_flag("--init", margs.init, "analyze a freshly initialized model");
  analyze->add_option("--reports", report_dirs, "directories of eval reports to plot (repeatable)");
  analyze->add_option("--heatmaps", heatmaps, "query heatmap images to dump")->check(CLI::NonNegativeNumber);
  auto* sweep = app.add_subcommand("sweep", "partial-annotation fraction grid");
  add_config_options(sweep, args);
  sweep->add_flag("--baseline", with_baseline, "also train the avg-pool baseline");

  std::string command = argc > 1 ? argv[1] : "";
  const auto fail = [&](const std::string& kind, const std::string& message, int code) {
    err << nlohmann::json{{"error", one_line(message)}, {"command", command}, {"kind", kind}}.dump() << "\n";
    return code;
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }
  try {
    if (*synth) return cmd_synth_gen(args, out);
    if (*train) return cmd_train(args, out);
    if (*eval) return cmd_eval(args, margs, shots, out);
    if (*analyze) return cmd_analyze(args, margs, report_dirs, heatmaps, out);
    if (*sweep) return cmd_sweep(args, with_baseline, out);
  } catch (const std::invalid_argument& e) {
    return fail("invalid_argument", e.what(), 1);
  } catch (const std::logic_error& e) {
    return fail("logic_error", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("runtime_error", e.what(), 1);
  }
  return fail("usage", "no command", 2);
}

}  // namespace posenorm
