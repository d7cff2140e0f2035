#include "red/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "red/checkpoint.hpp"
#include "red/data.hpp"
#include "red/errors.hpp"
#include "red/evaluation.hpp"
#include "red/training.hpp"

namespace red::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot open '" + path.string() + "'");
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("cannot write '" + path.string() + "'");
  }
  out << text;
}

json parse_json(const std::string& text, const fs::path& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in '" + origin.string() + "': " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Everything a train or grid run needs, resolved from the manifest file.
struct RunManifest {
  std::string original_text;
  DatasetManifest dataset;
  ModelConfig model;
  TrainConfig train;
  std::optional<GridSpace> grid;
  std::uint64_t seed = 0;
  fs::path out_base = "runs";

  json resolved(const std::string& command) const {
    json j;
    j["command"] = command;
    j["dataset"] = to_json(dataset);
    j["model"] = model;
    j["train"] = train;
    j["seed"] = seed;
    if (grid) j["grid"] = *grid;
    return j;
  }
};

// The master seed fills every component seed that the manifest leaves unset;
// an explicit --seed overrides all of them.
RunManifest load_run_manifest(const fs::path& path, std::optional<std::uint64_t> seed_flag) {
  RunManifest m;
  m.original_text = read_text(path);
  const json j = parse_json(m.original_text, path);
  const fs::path base = path.parent_path();
  m.seed = seed_flag.value_or(j.value("seed", std::uint64_t{0}));

  if (!j.contains("dataset")) {
    throw DataError("manifest '" + path.string() + "' has no 'dataset' entry");
  }
  json ds = j["dataset"];
  fs::path ds_base = base;
  if (ds.is_string()) {
    const fs::path ds_path = base / ds.get<std::string>();
    ds = parse_json(read_text(ds_path), ds_path);
    ds_base = ds_path.parent_path();
  }
  m.dataset = dataset_manifest_from_json(ds, ds_base);

  json model = j.value("model", json::object());
  json train = j.value("train", json::object());
  if (seed_flag || !ds.contains("seed")) m.dataset.seed = m.seed;
  if (seed_flag || !model.contains("seed")) model["seed"] = m.seed;
  if (seed_flag || !train.contains("seed")) train["seed"] = m.seed;
  m.model = model.get<ModelConfig>();
  m.train = train.get<TrainConfig>();
  m.train.validate();
  // Noise settings live in the training config; the data pipeline follows them.
  m.dataset.noise_std = m.train.noise_std;
  m.dataset.noise_per_epoch = m.train.noise_per_epoch;
  if (j.contains("grid")) m.grid = j["grid"].get<GridSpace>();
  if (j.contains("out")) m.out_base = base / j["out"].get<std::string>();
  return m;
}

struct ScalerFile {
  Scaler scaler;
  std::vector<std::string> column_names;
  std::optional<std::string> label_column;
  std::string text;
};

std::string scaler_file_text(const Scaler& s, const std::vector<std::string>& columns,
                             const std::optional<std::string>& label_column) {
  json j = s.to_json();
  j["column_names"] = columns;
  j["label_column"] = label_column ? json(*label_column) : json(nullptr);
  return j.dump(2) + "\n";
}

ScalerFile load_scaler_file(const fs::path& path) {
  if (!fs::exists(path)) {
    throw DataError("scaler file '" + path.string() + "' not found");
  }
  ScalerFile f;
  f.text = read_text(path);
  const json j = parse_json(f.text, path);
  f.scaler = Scaler::from_json(j);
  f.column_names = j.value("column_names", std::vector<std::string>{});
  if (j.contains("label_column") && !j["label_column"].is_null()) {
    f.label_column = j["label_column"].get<std::string>();
  }
  return f;
}

// Checkpoint plus the scaler it was trained with; the scaler hash in the
// checkpoint header must match the scaler file.
struct LoadedRun {
  RedModel model;
  ScalerFile scaler;
};

LoadedRun load_run(const fs::path& checkpoint, const std::string& scaler_flag) {
  if (!fs::exists(checkpoint)) {
    throw DataError("checkpoint '" + checkpoint.string() + "' not found");
  }
  LoadedCheckpoint ck = load_checkpoint_file(checkpoint);
  const fs::path scaler_path =
      scaler_flag.empty() ? checkpoint.parent_path() / "scaler.json" : fs::path(scaler_flag);
  LoadedRun run{std::move(ck.model), load_scaler_file(scaler_path)};
  if (ck.scaler_hash != 0 && ck.scaler_hash != fnv1a64(run.scaler.text)) {
    throw IntegrityError("scaler '" + scaler_path.string() +
                         "' does not belong to checkpoint '" + checkpoint.string() + "'");
  }
  if (run.scaler.scaler.mean.size() != run.model.dim()) {
    throw ShapeError("scaler and checkpoint disagree on dimensionality");
  }
  return run;
}

Dataset load_eval_data(const fs::path& path, bool has_header,
                       const std::optional<std::string>& label_column) {
  if (label_column && has_header) {
    try {
      return load_csv(path, true, label_column);
    } catch (const MissingColumnError&) {
      // Unlabeled file: fall through.
    }
  }
  return load_csv(path, has_header);
}

// ---------------------------------------------------------------- commands

int cmd_train(const fs::path& manifest_path, std::optional<std::uint64_t> seed,
              const std::string& out_flag, std::ostream& out) {
  RunManifest rm = load_run_manifest(manifest_path, seed);
  const Dataset data =
      load_csv(rm.dataset.path, rm.dataset.has_header, rm.dataset.label_column);
  rm.model.dim = data.dim();
  const PreparedData prepared = prepare_data(data, rm.dataset);

  const json resolved = rm.resolved("train");
  const fs::path base = out_flag.empty() ? rm.out_base : fs::path(out_flag);
  const fs::path dir = base / hex64(fnv1a64(resolved.dump()));
  fs::create_directories(dir);

  write_text(dir / "manifest.json", rm.original_text);
  write_text(dir / "resolved_manifest.json", resolved.dump(2) + "\n");
  const std::string scaler_text =
      scaler_file_text(prepared.scaler, data.column_names, rm.dataset.label_column);
  write_text(dir / "scaler.json", scaler_text);
  write_csv(dir / "test.csv", prepared.raw.test.x, data.column_names, prepared.raw.test.labels,
            rm.dataset.label_column.value_or("label"));

  TrainResult result = train(init_model(rm.model), prepared.standardized.train.x,
                             prepared.standardized.val.x, rm.train);
  save_checkpoint(result.model, dir / "model.ckpt", fnv1a64(scaler_text));
  write_history_csv(result.history, dir / "history.csv", false);
  {
    std::ofstream timing(dir / "timing.csv");
    timing << "epoch,seconds\n";
    for (const auto& e : result.history) timing << e.epoch << "," << e.seconds << "\n";
  }
  const json summary{{"run_dir", dir.string()},
                     {"rejected_rows", data.rejected_rows},
                     {"train_rows", prepared.raw.train.size()},
                     {"val_rows", prepared.raw.val.size()},
                     {"test_rows", prepared.raw.test.size()},
                     {"init_val_nll", result.history.front().val_nll},
                     {"best_val_nll", result.best_val_nll},
                     {"best_epoch", result.best_epoch},
                     {"epochs_run", result.history.size() - 1},
                     {"parameters", result.model.parameter_count()}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kOk;
}

int cmd_eval(const fs::path& checkpoint, const fs::path& data_path, const std::string& scaler_flag,
             const std::string& compare, bool no_header, const std::string& out_flag,
             std::ostream& out) {
  const LoadedRun run = load_run(checkpoint, scaler_flag);
  const Dataset raw = load_eval_data(data_path, !no_header, run.scaler.label_column);
  const Dataset ds = run.scaler.scaler.apply(raw);

  EvalReport report;
  report.dataset = data_path.stem().string();
  report.n = ds.size();
  report.d = ds.dim();
  report.nll = test_nll_report(run.model, ds.x, ds.labels);
  report.mean_nll_original_units = report.nll.mean_nll - run.scaler.scaler.log_jacobian();

  const fs::path dir = out_flag.empty() ? checkpoint.parent_path() / "eval" : fs::path(out_flag);
  fs::create_directories(dir);

  if (ds.labels && std::count(ds.labels->begin(), ds.labels->end(), 1) > 0) {
    const RankedScores rs = anomaly_scores(run.model, ds.x, *ds.labels);
    AnomalyReport a;
    a.anomaly_count = static_cast<std::size_t>(std::count(ds.labels->begin(), ds.labels->end(), 1));
    a.curve = pr_curve(rs);
    a.average_precision = average_precision(rs);
    a.ndcg = ndcg(rs);
    report.map = mean_average_precision({a.average_precision});
    write_pr_curve_csv(a.curve, dir / "pr_curve.csv");
    report.anomaly = std::move(a);
  }
  if (!compare.empty()) {
    const LoadedRun other = load_run(compare, "");
    const Dataset other_ds = other.scaler.scaler.apply(raw);
    const NllReport other_nll = test_nll_report(other.model, other_ds.x, other_ds.labels);
    // Per-row NLLs in original units so models with different scalers compare fairly.
    Vector a = report.nll.per_row_nll;
    Vector b = other_nll.per_row_nll;
    for (double& v : a) v -= run.scaler.scaler.log_jacobian();
    for (double& v : b) v -= other.scaler.scaler.log_jacobian();
    report.t_test = paired_t_test(a, b);
  }

  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  write_nll_table_csv({report}, dir / "nll_table.csv");
  if (report.anomaly) write_anomaly_table_csv({report}, dir / "anomaly_table.csv");
  out << report.to_json().dump(2) << "\n";
  return kOk;
}

int cmd_sample(const fs::path& checkpoint, std::size_t n, std::uint64_t seed,
               const std::string& scaler_flag, const std::string& out_flag, std::ostream& out) {
  if (n == 0) {
    throw DomainError("--n must be at least 1");
  }
  const LoadedRun run = load_run(checkpoint, scaler_flag);
  Rng rng(seed);
  const Matrix samples = run.scaler.scaler.inverse(sample(run.model, rng, n));
  std::vector<std::string> names = run.scaler.column_names;
  if (names.size() != samples.cols()) {
    names.clear();
    for (std::size_t c = 0; c < samples.cols(); ++c) names.push_back("x" + std::to_string(c + 1));
  }
  if (out_flag.empty()) {
    out.precision(17);
    for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
    out << "\n";
    for (std::size_t r = 0; r < samples.rows(); ++r) {
      for (std::size_t c = 0; c < samples.cols(); ++c) out << (c ? "," : "") << samples(r, c);
      out << "\n";
    }
  } else {
    write_csv(out_flag, samples, names);
  }
  return kOk;
}

int cmd_detect(const fs::path& checkpoint, const fs::path& data_path,
               std::optional<std::size_t> top_k, std::optional<double> threshold,
               const std::string& scaler_flag, bool no_header, const std::string& out_flag,
               std::ostream& out) {
  const LoadedRun run = load_run(checkpoint, scaler_flag);
  const Dataset raw = load_eval_data(data_path, !no_header, run.scaler.label_column);
  const Dataset ds = run.scaler.scaler.apply(raw);
  // Scores reported in original data units.
  Vector scores = log_prob_rows(run.model, ds.x);
  const double shift = run.scaler.scaler.log_jacobian();
  for (double& s : scores) s += shift;
  const RankedScores rs = rank_scores(scores, ds.labels.value_or(std::vector<int>{}));

  std::ofstream file;
  if (!out_flag.empty()) {
    file.open(out_flag);
    if (!file) throw Error("cannot write '" + out_flag + "'");
  }
  std::ostream& sink = out_flag.empty() ? out : file;
  sink.precision(17);
  sink << "rank,index,log_likelihood,flagged" << (ds.labels ? ",label" : "") << "\n";
  for (std::size_t r = 0; r < rs.order.size(); ++r) {
    const std::size_t i = rs.order[r];
    bool flagged = false;
    if (top_k) flagged = r < *top_k;
    if (threshold) flagged = rs.scores[i] <= *threshold;
    sink << r + 1 << "," << i << "," << rs.scores[i] << "," << (flagged ? 1 : 0);
    if (ds.labels) sink << "," << (*ds.labels)[i];
    sink << "\n";
  }
  return kOk;
}

int cmd_grid(const fs::path& manifest_path, std::optional<std::uint64_t> seed,
             const std::string& out_flag, std::ostream& out) {
  RunManifest rm = load_run_manifest(manifest_path, seed);
  if (!rm.grid) rm.grid = GridSpace{};
  const Dataset data =
      load_csv(rm.dataset.path, rm.dataset.has_header, rm.dataset.label_column);
  rm.model.dim = data.dim();
  const PreparedData prepared = prepare_data(data, rm.dataset);

  const json resolved = rm.resolved("grid");
  const fs::path base = out_flag.empty() ? rm.out_base : fs::path(out_flag);
  const fs::path dir = base / hex64(fnv1a64(resolved.dump()));
  fs::create_directories(dir);
  write_text(dir / "manifest.json", rm.original_text);
  write_text(dir / "resolved_manifest.json", resolved.dump(2) + "\n");
  const std::string scaler_text =
      scaler_file_text(prepared.scaler, data.column_names, rm.dataset.label_column);
  write_text(dir / "scaler.json", scaler_text);
  write_csv(dir / "test.csv", prepared.raw.test.x, data.column_names, prepared.raw.test.labels,
            rm.dataset.label_column.value_or("label"));

  GridResult g = grid_search(*rm.grid, rm.model, rm.train, prepared.standardized.train.x,
                             prepared.standardized.val.x);
  write_leaderboard_csv(g.leaderboard, dir / "leaderboard.csv");
  save_checkpoint(g.best_result.model, dir / "model.ckpt", fnv1a64(scaler_text));
  write_history_csv(g.best_result.history, dir / "history.csv", false);
  const json best{{"run_dir", dir.string()},
                  {"index", g.best.index},
                  {"model", g.best.model},
                  {"train", g.best.train},
                  {"val_nll", g.best.val_nll},
                  {"parameters", g.best.parameter_count},
                  {"runs", g.leaderboard.size()}};
  write_text(dir / "best.json", best.dump(2) + "\n");
  out << best.dump(2) << "\n";
  return kOk;
}

struct GradcheckOptions {
  std::string manifest;
  std::size_t dim = 5;
  std::size_t units = 8;
  std::size_t components = 3;
  std::size_t transform_hidden = 4;
  std::size_t batch = 4;
  double eps = 1e-5;
  double tol = 1e-4;
  double scale = 0.3;
  std::string inject_fault;
};

int cmd_gradcheck(const GradcheckOptions& o, std::uint64_t seed, std::ostream& out) {
  ModelConfig cfg;
  if (!o.manifest.empty()) {
    const json j = parse_json(read_text(o.manifest), o.manifest);
    cfg = j.value("model", j).get<ModelConfig>();
  } else {
    cfg.dim = o.dim;
    cfg.num_units = o.units;
    cfg.num_components = o.components;
    cfg.transform_hidden = o.transform_hidden;
  }
  cfg.seed = seed;
  Rng rng(derive_seed(seed, 77));
  RedModel m = init_model(cfg, rng);
  randomize_parameters(m, rng, o.scale);
  Matrix batch(o.batch, cfg.dim);
  for (double& v : batch.data()) v = rng.normal();

  GradientFn grad = loss_and_gradients;
  if (!o.inject_fault.empty()) {
    bool known = false;
    for (const auto& p : m.parameters()) known = known || p.name == o.inject_fault;
    if (!known) throw DomainError("--inject-fault: unknown parameter '" + o.inject_fault + "'");
    grad = [name = o.inject_fault](const RedModel& model, const Matrix& b) {
      LossAndGrad lg = loss_and_gradients(model, b);
      for (auto& p : lg.grads.parameters()) {
        if (p.name == name) {
          for (double& v : p.values) v = -v;
        }
      }
      return lg;
    };
  }
  const GradCheckReport rep = gradient_check(m, batch, o.eps, o.tol, grad);
  out << "checked " << rep.checked << " parameters, max relative error " << rep.max_rel_error
      << ", violations " << rep.violations.size() << "\n";
  for (const auto& v : rep.violations) {
    out << "  " << v.parameter << "[" << v.index << "] analytic=" << v.analytic
        << " numeric=" << v.numeric << " rel=" << v.rel_error << "\n";
  }
  out << (rep.passed() ? "PASS" : "FAIL") << "\n";
  return rep.passed() ? kOk : kNumericError;
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const CheckpointError*>(&e)) return kIntegrityError;
  if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const SingularityError*>(&e)) {
    return kNumericError;
  }
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
      dynamic_cast<const DomainError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const json::exception*>(&e) || dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kDataError;
  }
  return kInternal;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent density estimation: train, evaluate, sample and detect anomalies"};
  app.require_subcommand(1);

  std::string manifest, checkpoint, data, out_dir, scaler, compare;
  std::optional<std::uint64_t> seed;
  bool no_header = false;

  auto* train_cmd = app.add_subcommand("train", "Train a model from a run manifest");
  train_cmd->add_option("--manifest", manifest, "Run manifest (JSON)")->required();
  train_cmd->add_option("--seed", seed, "Override every seed in the manifest");
  train_cmd->add_option("--out", out_dir, "Base output directory");

  auto* eval_cmd = app.add_subcommand("eval", "Held-out NLL and anomaly metrics");
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--data", data, "CSV in original units")->required();
  eval_cmd->add_option("--scaler", scaler, "Scaler file (default: next to the checkpoint)");
  eval_cmd->add_option("--compare", compare, "Second checkpoint for a paired t-test");
  eval_cmd->add_flag("--no-header", no_header);
  eval_cmd->add_option("--out", out_dir, "Report directory");

  std::size_t n_samples = 1000;
  std::uint64_t sample_seed = 0;
  auto* sample_cmd = app.add_subcommand("sample", "Draw samples in original data units");
  sample_cmd->add_option("--checkpoint", checkpoint)->required();
  sample_cmd->add_option("--n", n_samples, "Number of samples");
  sample_cmd->add_option("--seed", sample_seed);
  sample_cmd->add_option("--scaler", scaler);
  sample_cmd->add_option("--out", out_dir, "Output CSV (default: stdout)");

  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  auto* detect_cmd = app.add_subcommand("detect", "Rank instances by log-likelihood");
  detect_cmd->add_option("--checkpoint", checkpoint)->required();
  detect_cmd->add_option("--data", data)->required();
  auto* k_opt = detect_cmd->add_option("--top-k", top_k, "Flag the k lowest-likelihood rows");
  auto* t_opt = detect_cmd->add_option("--log-likelihood-threshold", threshold,
                                       "Flag rows with log-likelihood <= threshold");
  k_opt->excludes(t_opt);
  detect_cmd->add_option("--scaler", scaler);
  detect_cmd->add_flag("--no-header", no_header);
  detect_cmd->add_option("--out", out_dir, "Output CSV (default: stdout)");

  auto* grid_cmd = app.add_subcommand("grid", "Grid search over hyperparameters");
  grid_cmd->add_option("--manifest", manifest)->required();
  grid_cmd->add_option("--seed", seed);
  grid_cmd->add_option("--out", out_dir);

  GradcheckOptions gc;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Compare analytic and numeric gradients");
  gc_cmd->add_option("--manifest", gc.manifest, "JSON with a 'model' config");
  gc_cmd->add_option("--d", gc.dim);
  gc_cmd->add_option("--units", gc.units);
  gc_cmd->add_option("--components", gc.components);
  gc_cmd->add_option("--transform-hidden", gc.transform_hidden);
  gc_cmd->add_option("--batch", gc.batch);
  gc_cmd->add_option("--eps", gc.eps);
  gc_cmd->add_option("--tol", gc.tol);
  gc_cmd->add_option("--scale", gc.scale, "Std of the random parameter perturbation");
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--inject-fault", gc.inject_fault, "Flip the sign of one parameter's gradient");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (*train_cmd) return cmd_train(manifest, seed, out_dir, out);
    if (*eval_cmd) return cmd_eval(checkpoint, data, scaler, compare, no_header, out_dir, out);
    if (*sample_cmd) return cmd_sample(checkpoint, n_samples, sample_seed, scaler, out_dir, out);
    if (*detect_cmd) {
      return cmd_detect(checkpoint, data, top_k, threshold, scaler, no_header, out_dir, out);
    }
    if (*grid_cmd) return cmd_grid(manifest, seed, out_dir, out);
    if (*gc_cmd) return cmd_gradcheck(gc, gc_seed, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace red::cli
