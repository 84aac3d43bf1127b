#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tractcloud/baselines.hpp"
#include "tractcloud/checkpoint.hpp"
#include "tractcloud/crl.hpp"
#include "tractcloud/errors.hpp"
#include "tractcloud/metrics.hpp"
#include "tractcloud/parallel.hpp"
#include "tractcloud/synthgen.hpp"
#include "tractcloud/trainer.hpp"
#include "tractcloud/tract_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace tractcloud;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kInternal = 4 };

// Raised for failures whose exit code is fixed by the command contract.
struct CliError : std::runtime_error {
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

struct GlobalOptions {
  std::size_t threads = 0;
  std::string config;
};

void write_run_json(const fs::path& path, const std::string& command, const json& resolved) {
  json run{{"command", command}, {"version", TRACTCLOUD_VERSION}, {"config", resolved}};
  write_text_file(path, run.dump(2) + "\n");
}

fs::path sibling_run_json(const fs::path& output_file) {
  auto p = output_file;
  p.replace_extension(".run.json");
  return p;
}

// Fills options that were not given on the command line from a JSON object
// keyed by long flag name.
void apply_config(CLI::App& sub, const std::string& path) {
  if (path.empty()) return;
  json cfg;
  try {
    cfg = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError("config " + path + ": expected a JSON object");
  if (cfg.contains(sub.get_name()) && cfg[sub.get_name()].is_object()) cfg = cfg[sub.get_name()];
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError("config " + path + ": unknown option '" + key + "' for " + sub.get_name());
    if (opt->count() > 0) continue;
    if (value.is_array()) {
      for (const auto& v : value) opt->add_result(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    }
    opt->run_callback();
  }
}

// ---- synth

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  bool no_labels = false;
};

void add_synth(CLI::App& app, SynthArgs& a) {
  auto* s = app.add_subcommand("synth", "Generate a synthetic cohort with a planted regional signal");
  s->add_option("--out", a.out, "Output directory")->required();
  s->add_option("--subjects", a.cfg.subject_count, "Number of subjects")->capture_default_str();
  s->add_option("--seed", a.cfg.seed, "Random seed")->capture_default_str();
  s->add_option("--streamlines-min", a.cfg.streamlines_min, "Fewest streamlines per subject")->capture_default_str();
  s->add_option("--streamlines-max", a.cfg.streamlines_max, "Most streamlines per subject")->capture_default_str();
  s->add_option("--points-min", a.cfg.points_min, "Fewest points per streamline")->capture_default_str();
  s->add_option("--points-max", a.cfg.points_max, "Most points per streamline")->capture_default_str();
  s->add_option("--arc-radius", a.cfg.arc_radius, "Arc radius (mm)")->capture_default_str();
  s->add_option("--center-jitter", a.cfg.center_jitter, "Per-subject translation std (mm)")->capture_default_str();
  s->add_option("--thickness", a.cfg.bundle_thickness, "Bundle cross-section std (mm)")->capture_default_str();
  s->add_option("--region-center", a.cfg.critical_region.center, "Planted region center x y z (mm)")
      ->expected(3)
      ->capture_default_str();
  s->add_option("--region-radius", a.cfg.critical_region.radius, "Planted region radius (mm)")->capture_default_str();
  s->add_option("--region-offset-min", a.cfg.regional_offset_min, "Smallest per-subject regional FA offset")
      ->capture_default_str();
  s->add_option("--region-offset-max", a.cfg.regional_offset_max, "Largest per-subject regional FA offset")
      ->capture_default_str();
  s->add_option("--a0", a.cfg.a0, "Score intercept")->capture_default_str();
  s->add_option("--a1", a.cfg.a1, "Score coefficient on mean regional FA")->capture_default_str();
  s->add_option("--a2", a.cfg.a2, "Score coefficient on streamline count")->capture_default_str();
  s->add_option("--noise", a.cfg.noise_std, "Score noise std")->capture_default_str();
  s->add_option("--train-fraction", a.cfg.train_fraction, "Fraction of subjects in the train split")
      ->capture_default_str();
  s->add_flag("--no-labels", a.no_labels, "Skip per-point label files");
}

int run_synth(SynthArgs& a) {
  a.cfg.write_labels = !a.no_labels;
  a.cfg.validate();
  const fs::path out(a.out);
  write_run_json(out / "run.json", "synth", a.cfg.to_json());
  const auto cohort = generate_cohort(a.cfg);
  write_cohort(cohort, out);
  std::cerr << "wrote " << cohort.tracts.size() << " subjects to " << out.string() << "\n";
  return kOk;
}

// ---- train

struct TrainArgs {
  TrainConfig cfg;
  std::string manifest;
  std::string out;
  std::string target = "raw";
  bool quiet = false;
};

void add_train(CLI::App& app, TrainArgs& a) {
  auto* s = app.add_subcommand("train", "Train the Siamese point-cloud regressor");
  s->add_option("--manifest", a.manifest, "Cohort manifest CSV")->required();
  s->add_option("--out", a.out, "Output directory (model.wmck, log.csv, run.json)")->required();
  s->add_option("--epochs", a.cfg.epochs, "Training epochs")->capture_default_str();
  s->add_option("--lr", a.cfg.lr, "Adamax learning rate")->capture_default_str();
  s->add_option("--batch-pairs", a.cfg.batch_pairs, "Subject pairs per optimizer step")->capture_default_str();
  s->add_option("--w", a.cfg.loss_weight, "Weight of the paired-siamese loss term (0 disables it)")
      ->capture_default_str();
  s->add_option("--points", a.cfg.sample_points, "Points sampled per subject per step")->capture_default_str();
  s->add_option("--decay", a.cfg.weight_decay, "Weight decay")->capture_default_str();
  s->add_option("--seed", a.cfg.seed, "Random seed")->capture_default_str();
  s->add_option("--eval-every", a.cfg.eval_every, "Test-split evaluation interval in epochs (the last epoch is always evaluated)")
      ->capture_default_str();
  s->add_option("--target", a.target, "Target scaling: raw | standardized")->capture_default_str();
  s->add_flag("--quiet", a.quiet, "No per-epoch progress on stderr");
}

int run_train(TrainArgs& a) {
  if (a.target == "raw") {
    a.cfg.target_mode = TargetMode::raw;
  } else if (a.target == "standardized") {
    a.cfg.target_mode = TargetMode::standardized;
  } else {
    throw ConfigError("--target must be raw or standardized");
  }
  a.cfg.validate();
  const fs::path out(a.out);
  json resolved = a.cfg.to_json();
  resolved["manifest"] = a.manifest;
  write_run_json(out / "run.json", "train", resolved);

  const auto manifest = read_manifest(a.manifest);
  std::ofstream log(out / "log.csv", std::ios::trunc);
  log << log_csv_header();
  const auto result = train(manifest, a.cfg, [&](const EpochLog& row) {
    log << log_csv_row(row) << std::flush;
    if (!a.quiet) {
      std::cerr << "epoch " << row.epoch << " loss " << row.total << " train_mae " << row.train_mae;
      if (row.test_mae) std::cerr << " test_mae " << *row.test_mae << " test_r " << *row.test_r;
      std::cerr << "\n";
    }
  });
  save_checkpoint(result.checkpoint, out / "model.wmck");
  return kOk;
}

// ---- predict

struct PredictArgs {
  std::string model;
  std::string manifest;
  std::string tract;
  std::string split = "test";
  std::string out;
  std::size_t repeats = 1;
  std::optional<std::uint64_t> seed;
};

void add_predict(CLI::App& app, PredictArgs& a) {
  auto* s = app.add_subcommand("predict", "Predict subject scores with a trained model");
  s->add_option("--model", a.model, "Checkpoint (model.wmck)")->required();
  auto* m = s->add_option("--manifest", a.manifest, "Cohort manifest CSV");
  auto* t = s->add_option("--tract", a.tract, "Single WMPC tract file");
  m->excludes(t);
  s->add_option("--split", a.split, "Manifest split: train | test | all")->capture_default_str();
  s->add_option("--out", a.out, "Output CSV subject_id,score")->required();
  s->add_option("--repeats", a.repeats, "Independent point samplings averaged per subject")->capture_default_str();
  s->add_option("--seed", a.seed, "Sampling seed (default: the checkpoint's evaluation seed)");
}

std::vector<ManifestRow> select_split(const Manifest& manifest, const std::string& split) {
  if (split == "all") return manifest.rows;
  return manifest.split(parse_split(split));
}

int run_predict(PredictArgs& a) {
  if (a.manifest.empty() == a.tract.empty()) throw ConfigError("predict needs exactly one of --manifest or --tract");
  if (a.repeats == 0) throw ConfigError("--repeats must be >= 1");
  const fs::path out(a.out);
  json resolved{{"model", a.model},     {"manifest", a.manifest}, {"tract", a.tract},
                {"split", a.split},     {"repeats", a.repeats},
                {"seed", a.seed ? json(*a.seed) : json(nullptr)}};
  write_run_json(sibling_run_json(out), "predict", resolved);

  const Predictor predictor(load_checkpoint(a.model));
  std::vector<std::pair<std::string, fs::path>> subjects;
  if (!a.tract.empty()) {
    subjects.emplace_back(fs::path(a.tract).stem().string(), a.tract);
  } else {
    for (const auto& row : select_split(read_manifest(a.manifest), a.split)) {
      subjects.emplace_back(row.subject_id, row.tract_path);
    }
  }
  std::vector<double> scores(subjects.size());
  parallel_for(subjects.size(), [&](std::size_t i) {
    auto tract = read_tract(subjects[i].second);
    tract.subject_id = subjects[i].first;
    scores[i] = predictor.predict(tract, a.repeats, a.seed);
  });
  std::ostringstream csv;
  csv << "subject_id,score\n";
  for (std::size_t i = 0; i < subjects.size(); ++i) csv << subjects[i].first << ',' << format_double(scores[i]) << '\n';
  write_text_file(out, csv.str());
  return kOk;
}

// ---- eval

struct EvalArgs {
  std::string predictions;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
  auto* s = app.add_subcommand("eval", "Score predictions against manifest truth (MAE, Pearson r)");
  s->add_option("--predictions", a.predictions, "CSV subject_id,score")->required();
  s->add_option("--manifest", a.manifest, "Cohort manifest CSV")->required();
  s->add_option("--split", a.split, "Manifest split: train | test | all")->capture_default_str();
  s->add_option("--out", a.out, "Report JSON (stdout when omitted)");
}

std::map<std::string, double> read_predictions(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "subject_id,score") {
    throw FormatError(path.string() + ": expected header subject_id,score");
  }
  std::map<std::string, double> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": missing comma");
    const auto id = line.substr(0, comma);
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": bad score");
    }
    if (!out.emplace(id, v).second) throw ValidationError(path.string() + ": duplicate subject " + id);
  }
  return out;
}

int run_eval(EvalArgs& a) {
  json resolved{{"predictions", a.predictions}, {"manifest", a.manifest}, {"split", a.split}};
  if (!a.out.empty()) write_run_json(sibling_run_json(a.out), "eval", resolved);
  const auto preds = read_predictions(a.predictions);
  const auto rows = select_split(read_manifest(a.manifest), a.split);
  std::vector<std::string> missing;
  std::set<std::string> wanted;
  std::vector<double> p, y;
  for (const auto& row : rows) {
    wanted.insert(row.subject_id);
    const auto it = preds.find(row.subject_id);
    if (it == preds.end()) {
      missing.push_back(row.subject_id);
      continue;
    }
    p.push_back(it->second);
    y.push_back(row.score);
  }
  std::vector<std::string> extra;
  for (const auto& [id, v] : preds) {
    if (!wanted.count(id)) extra.push_back(id);
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "subject mismatch between predictions and manifest";
    auto list = [](const std::vector<std::string>& ids) {
      std::string s;
      for (const auto& id : ids) s += (s.empty() ? "" : ", ") + id;
      return s;
    };
    if (!missing.empty()) msg += "\n  missing predictions: " + list(missing);
    if (!extra.empty()) msg += "\n  not in manifest split: " + list(extra);
    throw CliError(kUsage, msg);
  }
  const auto report = evaluate(p, y);
  json j{{"mae", report.mae},
         {"mae_std", report.mae_std},
         {"r", report.pearson_r},
         {"degenerate", report.degenerate},
         {"n", report.n}};
  if (a.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    write_text_file(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---- localize

struct LocalizeArgs {
  CrlConfig cfg;
  std::string model;
  std::string tract;
  std::string labels;
  std::string manifest;
  std::string split = "test";
  std::string out;
};

void add_localize(CLI::App& app, LocalizeArgs& a) {
  auto* s = app.add_subcommand("localize", "Critical region localization on one tract or a manifest split");
  s->add_option("--model", a.model, "Checkpoint (model.wmck)")->required();
  auto* t = s->add_option("--tract", a.tract, "Single WMPC tract file");
  auto* m = s->add_option("--manifest", a.manifest, "Cohort manifest CSV (uses its labels column)");
  t->excludes(m);
  s->add_option("--labels", a.labels, "Per-point label CSV for --tract")->needs(t);
  s->add_option("--split", a.split, "Manifest split: train | test | all")->capture_default_str();
  s->add_option("--out", a.out, "Output directory (<id>.crl.csv, <id>.regions.json)")->required();
  s->add_option("--N", a.cfg.set_size, "Points per set")->capture_default_str();
  s->add_option("--M", a.cfg.repeats, "Partition passes")->capture_default_str();
  s->add_option("--top", a.cfg.top_fraction, "Fraction of points marked critical")->capture_default_str();
  s->add_option("--seed", a.cfg.seed, "Partition seed")->capture_default_str();
}

int run_localize(LocalizeArgs& a) {
  if (a.manifest.empty() == a.tract.empty()) throw ConfigError("localize needs exactly one of --tract or --manifest");
  a.cfg.validate();
  const fs::path out(a.out);
  json resolved = a.cfg.to_json();
  resolved["model"] = a.model;
  resolved["tract"] = a.tract;
  resolved["labels"] = a.labels;
  resolved["manifest"] = a.manifest;
  resolved["split"] = a.split;
  write_run_json(out / "run.json", "localize", resolved);

  struct Job {
    std::string id;
    fs::path tract;
    std::optional<fs::path> labels;
  };
  std::vector<Job> jobs;
  if (!a.tract.empty()) {
    jobs.push_back({fs::path(a.tract).stem().string(), a.tract,
                    a.labels.empty() ? std::nullopt : std::optional<fs::path>(a.labels)});
  } else {
    for (const auto& row : select_split(read_manifest(a.manifest), a.split)) {
      jobs.push_back({row.subject_id, row.tract_path, row.labels_path});
    }
  }

  const auto ckpt = load_checkpoint(a.model);
  const auto model = PointNet::from_checkpoint(ckpt);
  for (const auto& job : jobs) {
    const auto tract = read_tract(job.tract);
    const auto table = flatten_points(tract);
    std::optional<LabelTable> labels;
    if (job.labels) {
      try {
        labels = read_labels(*job.labels, table.rows());
      } catch (const ValidationError& e) {
        throw CliError(kUsage, job.id + ": " + e.what());
      }
    }
    const auto map = localize(model, ckpt.input, table, a.cfg);
    write_text_file(out / (job.id + ".crl.csv"), weights_to_csv(map, tract));
    if (labels) {
      const auto bins = region_histogram(map, *labels);
      auto j = histogram_to_json(bins);
      j["subject_id"] = job.id;
      write_text_file(out / (job.id + ".regions.json"), j.dump(2) + "\n");
    }
  }
  return kOk;
}

// ---- baseline

struct BaselineArgs {
  std::string manifest;
  std::string kind = "mean";
  std::string model = "lr";
  std::uint64_t seed = 0;
  std::string out;
};

void add_baseline(CLI::App& app, BaselineArgs& a) {
  auto* s = app.add_subcommand("baseline", "Mean-feature or along-tract features with LR or elastic net");
  s->add_option("--manifest", a.manifest, "Cohort manifest CSV")->required();
  s->add_option("--kind", a.kind, "Features: mean | afq")->capture_default_str();
  s->add_option("--model", a.model, "Regressor: lr | enr")->capture_default_str();
  s->add_option("--seed", a.seed, "Seed of the internal validation split")->capture_default_str();
  s->add_option("--out", a.out, "Report JSON (stdout when omitted)");
}

int run_baseline_cmd(BaselineArgs& a) {
  const auto kind = parse_feature_kind(a.kind);
  const auto model = parse_regressor_kind(a.model);
  json resolved{{"manifest", a.manifest}, {"kind", a.kind}, {"model", a.model}, {"seed", a.seed}};
  if (!a.out.empty()) write_run_json(sibling_run_json(a.out), "baseline", resolved);
  BaselineOptions opts;
  opts.seed = a.seed;
  const auto report = run_baseline(read_manifest(a.manifest), kind, model, opts);
  const auto text = report.to_json().dump(2) + "\n";
  if (a.out.empty()) {
    std::cout << text;
  } else {
    write_text_file(a.out, text);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tractcloud: tract point-cloud score regression and critical region localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", TRACTCLOUD_VERSION);
  GlobalOptions global;
  app.add_option("--threads", global.threads, "Worker cap (0: all cores)")->capture_default_str();
  app.add_option("--config", global.config, "JSON file supplying values for flags not given on the command line");

  SynthArgs synth;
  TrainArgs train_args;
  PredictArgs predict;
  EvalArgs eval;
  LocalizeArgs loc;
  BaselineArgs base;
  add_synth(app, synth);
  add_train(app, train_args);
  add_predict(app, predict);
  add_eval(app, eval);
  add_localize(app, loc);
  add_baseline(app, base);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    set_max_threads(global.threads);
    CLI::App* sub = app.get_subcommands().front();
    apply_config(*sub, global.config);
    const std::string name = sub->get_name();
    if (name == "synth") return run_synth(synth);
    if (name == "train") return run_train(train_args);
    if (name == "predict") return run_predict(predict);
    if (name == "eval") return run_eval(eval);
    if (name == "localize") return run_localize(loc);
    if (name == "baseline") return run_baseline_cmd(base);
    return kUsage;
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kUsage;
  } catch (const CLI::Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConsistencyError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  } catch (const Error& e) {
    std::cerr << "invalid data: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
}
