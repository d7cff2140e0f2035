#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "red/cli.hpp"
#include "red/numerics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
  int code = 0;
  std::string out;
  std::string err;
};

Invocation red_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "red");
  std::ostringstream out, err;
  Invocation inv;
  inv.code = red::cli::run(args, out, err);
  inv.out = out.str();
  inv.err = err.str();
  return inv;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Correlated 2-D Gaussian in deliberately non-standard units.
constexpr double kMean0 = 5.0, kMean1 = -3.0, kStd0 = 2.0, kStd1 = 0.5, kRho = 0.8;

void gaussian_row(red::Rng& rng, double& a, double& b) {
  const double u = rng.normal();
  const double v = kRho * u + std::sqrt(1.0 - kRho * kRho) * rng.normal();
  a = kMean0 + kStd0 * u;
  b = kMean1 + kStd1 * v;
}

std::vector<std::string> csv_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::istringstream in(line);
  for (std::string c; std::getline(in, c, ',');) cells.push_back(c);
  return cells;
}

// One shared workspace: datasets, manifests and a trained run.
struct Workspace {
  fs::path root;
  fs::path run_dir;
  fs::path labeled_run_dir;
  json summary;

  Workspace() {
    root = fs::temp_directory_path() / "red_cli_tests";
    fs::remove_all(root);
    fs::create_directories(root);

    red::Rng rng(11);
    std::ostringstream plain, labeled;
    plain.precision(17);
    labeled.precision(17);
    plain << "height,weight\n";
    labeled << "height,weight,label\n";
    for (int r = 0; r < 3000; ++r) {
      double a, b;
      gaussian_row(rng, a, b);
      plain << a << "," << b << "\n";
      labeled << a << "," << b << ",0\n";
    }
    for (int r = 0; r < 40; ++r) {
      // Against the correlation: large Mahalanobis distance.
      const double s = r % 2 ? 1.0 : -1.0;
      labeled << kMean0 + s * 2.5 * kStd0 << "," << kMean1 - s * 2.5 * kStd1 << ",1\n";
    }
    write_file(root / "gauss.csv", plain.str());
    write_file(root / "gauss_labeled.csv", labeled.str());

    write_file(root / "run.json", manifest("gauss.csv", false).dump(2));
    write_file(root / "run_labeled.json", manifest("gauss_labeled.csv", true).dump(2));

    const Invocation t = red_cli({"train", "--manifest", (root / "run.json").string()});
    REQUIRE_MESSAGE(t.code == 0, t.err);
    summary = json::parse(t.out);
    run_dir = summary["run_dir"].get<std::string>();

    const Invocation l = red_cli({"train", "--manifest", (root / "run_labeled.json").string()});
    REQUIRE_MESSAGE(l.code == 0, l.err);
    labeled_run_dir = json::parse(l.out)["run_dir"].get<std::string>();
  }

  static json manifest(const std::string& csv, bool labeled) {
    json ds{{"path", csv}};
    if (labeled) ds["label_column"] = "label";
    return json{{"seed", 3},
                {"out", "runs"},
                {"dataset", ds},
                {"model", {{"num_units", 16}, {"num_components", 5}, {"transform_hidden", 4}}},
                {"train",
                 {{"init_lr", 1e-2},
                  {"decay_factor", 0.95},
                  {"batch_size", 128},
                  {"max_epochs", 30},
                  {"patience", 10}}}};
  }
};

Workspace& workspace() {
  static Workspace w;
  return w;
}

}  // namespace

TEST_CASE("train writes a run directory and improves on the initial model") {
  Workspace& w = workspace();
  for (const char* f : {"manifest.json", "resolved_manifest.json", "scaler.json", "test.csv",
                        "model.ckpt", "history.csv", "timing.csv", "summary.json"}) {
    CHECK_MESSAGE(fs::exists(w.run_dir / f), f);
  }
  CHECK(w.summary["best_val_nll"].get<double>() < w.summary["init_val_nll"].get<double>());
  CHECK(w.summary["train_rows"] == 2400);
  CHECK(w.summary["val_rows"] == 300);
  CHECK(w.summary["test_rows"] == 300);
  CHECK(read_file(w.run_dir / "history.csv").rfind("epoch,train_nll,val_nll,lr\n", 0) == 0);
}

TEST_CASE("rerunning a manifest reproduces history.csv byte for byte") {
  Workspace& w = workspace();
  const fs::path other = w.root / "rerun";
  const Invocation t =
      red_cli({"train", "--manifest", (w.root / "run.json").string(), "--out", other.string()});
  REQUIRE(t.code == 0);
  const fs::path dir = json::parse(t.out)["run_dir"].get<std::string>();
  CHECK(dir.filename() == w.run_dir.filename());
  CHECK(read_file(dir / "history.csv") == read_file(w.run_dir / "history.csv"));
  CHECK(read_file(dir / "model.ckpt") == read_file(w.run_dir / "model.ckpt"));
}

TEST_CASE("a different seed gives a different run directory") {
  Workspace& w = workspace();
  const Invocation t = red_cli({"train", "--manifest", (w.root / "run.json").string(), "--seed",
                                "4", "--out", (w.root / "seeded").string()});
  REQUIRE(t.code == 0);
  CHECK(fs::path(json::parse(t.out)["run_dir"].get<std::string>()).filename() !=
        w.run_dir.filename());
}

TEST_CASE("missing inputs are data errors naming the path") {
  Workspace& w = workspace();
  const Invocation a = red_cli({"train", "--manifest", (w.root / "nope.json").string()});
  CHECK(a.code == red::cli::kDataError);
  CHECK(a.err.find("nope.json") != std::string::npos);

  write_file(w.root / "bad_ds.json", Workspace::manifest("absent.csv", false).dump());
  const Invocation b = red_cli({"train", "--manifest", (w.root / "bad_ds.json").string()});
  CHECK(b.code == red::cli::kDataError);
  CHECK(b.err.find("absent.csv") != std::string::npos);

  const Invocation c = red_cli({"eval", "--checkpoint", (w.root / "none.ckpt").string(), "--data",
                                (w.root / "gauss.csv").string()});
  CHECK(c.code == red::cli::kDataError);
  CHECK(c.err.find("none.ckpt") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(red_cli({}).code == red::cli::kUsage);
  CHECK(red_cli({"frobnicate"}).code == red::cli::kUsage);
  CHECK(red_cli({"train"}).code == red::cli::kUsage);
}

TEST_CASE("eval on labeled data reports anomaly metrics") {
  Workspace& w = workspace();
  const fs::path out = w.root / "eval_labeled";
  const Invocation e =
      red_cli({"eval", "--checkpoint", (w.labeled_run_dir / "model.ckpt").string(), "--data",
               (w.root / "gauss_labeled.csv").string(), "--out", out.string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const json rep = json::parse(read_file(out / "report.json"));
  REQUIRE(rep.contains("anomaly"));
  CHECK(rep["anomaly"]["anomaly_count"] == 40);
  const double ap = rep["anomaly"]["average_precision"].get<double>();
  CHECK(ap > 0.0);
  CHECK(ap <= 1.0);
  CHECK(rep["nll"]["rows_used"] == 3000);
  CHECK(rep["nll"]["anomalies_excluded"] == 40);
  CHECK(fs::exists(out / "pr_curve.csv"));
  CHECK(fs::exists(out / "anomaly_table.csv"));
  CHECK(read_file(out / "nll_table.csv").rfind("Dataset,N,d,RED NLL\n", 0) == 0);
}

TEST_CASE("eval on unlabeled data omits the anomaly section") {
  Workspace& w = workspace();
  const Invocation e = red_cli({"eval", "--checkpoint", (w.run_dir / "model.ckpt").string(),
                                "--data", (w.run_dir / "test.csv").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const json rep = json::parse(e.out);
  CHECK_FALSE(rep.contains("anomaly"));
  CHECK(rep["n"] == 300);
  // Original-unit NLL differs from the standardized one by log(std0 * std1) roughly.
  const double shift = rep["nll"]["mean_nll_original_units"].get<double>() -
                       rep["nll"]["mean_nll"].get<double>();
  CHECK(std::abs(shift - std::log(kStd0 * kStd1)) < 0.2);
  CHECK(fs::exists(w.run_dir / "eval" / "report.json"));
  CHECK_FALSE(fs::exists(w.run_dir / "eval" / "pr_curve.csv"));
}

TEST_CASE("eval --compare runs a paired t-test") {
  Workspace& w = workspace();
  const fs::path other = w.root / "seeded";
  fs::path other_ckpt;
  for (const auto& entry : fs::directory_iterator(other)) other_ckpt = entry.path() / "model.ckpt";
  REQUIRE(fs::exists(other_ckpt));
  const Invocation e = red_cli({"eval", "--checkpoint", (w.run_dir / "model.ckpt").string(),
                                "--data", (w.run_dir / "test.csv").string(), "--compare",
                                other_ckpt.string(), "--out", (w.root / "cmp").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  const json rep = json::parse(e.out);
  REQUIRE(rep.contains("t_test"));
  CHECK(rep["t_test"]["dof"] == 299);
  const double p = rep["t_test"]["p_two_sided"].get<double>();
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
}

TEST_CASE("tampered checkpoints and foreign scalers are integrity errors") {
  Workspace& w = workspace();
  const fs::path dir = w.root / "tampered";
  fs::create_directories(dir);
  std::string bytes = read_file(w.run_dir / "model.ckpt");
  bytes[bytes.size() - 30] ^= 0x40;
  write_file(dir / "model.ckpt", bytes);
  fs::copy_file(w.run_dir / "scaler.json", dir / "scaler.json",
                fs::copy_options::overwrite_existing);
  const Invocation e = red_cli({"eval", "--checkpoint", (dir / "model.ckpt").string(), "--data",
                                (w.run_dir / "test.csv").string()});
  CHECK(e.code == red::cli::kIntegrityError);

  const Invocation s = red_cli({"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(),
                                "--scaler", (w.labeled_run_dir / "scaler.json").string()});
  CHECK(s.code == red::cli::kIntegrityError);
}

TEST_CASE("sample reproduces the data covariance in original units") {
  Workspace& w = workspace();
  const Invocation s = red_cli(
      {"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--n", "1000", "--seed", "9"});
  REQUIRE_MESSAGE(s.code == 0, s.err);
  const auto lines = csv_lines(s.out);
  REQUIRE(lines.size() == 1001);
  CHECK(lines[0] == "height,weight");

  double m0 = 0, m1 = 0, s00 = 0, s11 = 0, s01 = 0;
  std::vector<std::pair<double, double>> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    REQUIRE(cells.size() == 2);
    rows.emplace_back(std::stod(cells[0]), std::stod(cells[1]));
    m0 += rows.back().first;
    m1 += rows.back().second;
  }
  m0 /= 1000.0;
  m1 /= 1000.0;
  for (const auto& [a, b] : rows) {
    s00 += (a - m0) * (a - m0);
    s11 += (b - m1) * (b - m1);
    s01 += (a - m0) * (b - m1);
  }
  s00 /= 999.0;
  s11 /= 999.0;
  s01 /= 999.0;
  const double c00 = kStd0 * kStd0, c11 = kStd1 * kStd1, c01 = kRho * kStd0 * kStd1;
  CHECK(std::abs(s00 - c00) < 0.15 * c00);
  CHECK(std::abs(s11 - c11) < 0.15 * c11);
  CHECK(std::abs(s01 - c01) < 0.15 * c01);
  CHECK(std::abs(m0 - kMean0) < 0.15 * kStd0);
  CHECK(std::abs(m1 - kMean1) < 0.15 * kStd1);

  const Invocation again = red_cli(
      {"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--n", "1000", "--seed", "9"});
  CHECK(again.out == s.out);
  const Invocation other = red_cli(
      {"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--n", "1000", "--seed", "10"});
  CHECK(other.out != s.out);

  const fs::path file = w.root / "samples.csv";
  REQUIRE(red_cli({"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--n", "5",
                   "--out", file.string()})
              .code == 0);
  CHECK(csv_lines(read_file(file)).size() == 6);
  CHECK(red_cli({"sample", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--n", "0"}).code ==
        red::cli::kDataError);
}

TEST_CASE("sample without a scaler is an error") {
  Workspace& w = workspace();
  const fs::path dir = w.root / "lonely";
  fs::create_directories(dir);
  fs::copy_file(w.run_dir / "model.ckpt", dir / "model.ckpt", fs::copy_options::overwrite_existing);
  const Invocation s = red_cli({"sample", "--checkpoint", (dir / "model.ckpt").string()});
  CHECK(s.code == red::cli::kDataError);
  CHECK(s.err.find("scaler") != std::string::npos);
}

TEST_CASE("detect ranks a planted outlier first") {
  Workspace& w = workspace();
  std::string text = read_file(w.run_dir / "test.csv");
  const std::size_t planted = csv_lines(text).size() - 1;
  std::ostringstream extra;
  extra << kMean0 + 10 * kStd0 << "," << kMean1 - 10 * kStd1 << "\n";
  write_file(w.root / "planted.csv", text + extra.str());

  const Invocation d = red_cli({"detect", "--checkpoint", (w.run_dir / "model.ckpt").string(),
                                "--data", (w.root / "planted.csv").string(), "--top-k", "3"});
  REQUIRE_MESSAGE(d.code == 0, d.err);
  const auto lines = csv_lines(d.out);
  CHECK(lines[0] == "rank,index,log_likelihood,flagged");
  REQUIRE(lines.size() == planted + 2);
  const auto first = split(lines[1]);
  CHECK(first[0] == "1");
  CHECK(std::stoul(first[1]) == planted);
  std::size_t flagged = 0;
  double prev = -INFINITY;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    flagged += cells[3] == "1";
    const double ll = std::stod(cells[2]);
    CHECK(ll >= prev);
    prev = ll;
  }
  CHECK(flagged == 3);

  const Invocation none = red_cli({"detect", "--checkpoint", (w.run_dir / "model.ckpt").string(),
                                   "--data", (w.root / "planted.csv").string(), "--top-k", "0"});
  REQUIRE(none.code == 0);
  for (std::size_t i = 1; i < csv_lines(none.out).size(); ++i) {
    CHECK(split(csv_lines(none.out)[i])[3] == "0");
  }

  const Invocation thr =
      red_cli({"detect", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--data",
               (w.root / "planted.csv").string(), "--log-likelihood-threshold=-1e300"});
  REQUIRE_MESSAGE(thr.code == 0, thr.err);
  for (std::size_t i = 1; i < csv_lines(thr.out).size(); ++i) {
    CHECK(split(csv_lines(thr.out)[i])[3] == "0");
  }

  const Invocation both =
      red_cli({"detect", "--checkpoint", (w.run_dir / "model.ckpt").string(), "--data",
               (w.root / "planted.csv").string(), "--top-k", "1", "--log-likelihood-threshold",
               "0"});
  CHECK(both.code == red::cli::kUsage);
}

TEST_CASE("detect on labeled data appends the label column") {
  Workspace& w = workspace();
  const Invocation d =
      red_cli({"detect", "--checkpoint", (w.labeled_run_dir / "model.ckpt").string(), "--data",
               (w.root / "gauss_labeled.csv").string(), "--top-k", "40"});
  REQUIRE_MESSAGE(d.code == 0, d.err);
  const auto lines = csv_lines(d.out);
  CHECK(lines[0] == "rank,index,log_likelihood,flagged,label");
  CHECK(lines.size() == 3041);
}

TEST_CASE("a one-point grid reproduces train") {
  Workspace& w = workspace();
  json m = Workspace::manifest("gauss.csv", false);
  m["grid"] = {{"num_units", {16}},
               {"init_lr", {1e-2}},
               {"decay_factor", {0.95}},
               {"num_fcs", {1}},
               {"num_components", {5}}};
  write_file(w.root / "grid1.json", m.dump());
  const Invocation g = red_cli({"grid", "--manifest", (w.root / "grid1.json").string()});
  REQUIRE_MESSAGE(g.code == 0, g.err);
  const json best = json::parse(g.out);
  const fs::path dir = best["run_dir"].get<std::string>();
  CHECK(best["val_nll"].get<double>() == w.summary["best_val_nll"].get<double>());
  CHECK(read_file(dir / "history.csv") == read_file(w.run_dir / "history.csv"));
  CHECK(read_file(dir / "model.ckpt") == read_file(w.run_dir / "model.ckpt"));
}

TEST_CASE("grid leaderboard is sorted by validation NLL") {
  Workspace& w = workspace();
  json m = Workspace::manifest("gauss.csv", false);
  m["train"]["max_epochs"] = 3;
  m["grid"] = {{"num_units", {4, 8}},
               {"init_lr", {2e-3, 1e-4}},
               {"decay_factor", {1.0}},
               {"num_fcs", {1}},
               {"num_components", {2}}};
  write_file(w.root / "grid4.json", m.dump());
  const Invocation g = red_cli({"grid", "--manifest", (w.root / "grid4.json").string()});
  REQUIRE_MESSAGE(g.code == 0, g.err);
  const fs::path dir = json::parse(g.out)["run_dir"].get<std::string>();
  const auto lines = csv_lines(read_file(dir / "leaderboard.csv"));
  REQUIRE(lines.size() == 5);
  double prev = -INFINITY;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i]);
    CHECK(cells[0] == std::to_string(i));
    CHECK(cells.back() == "ok");
    const double v = std::stod(cells[cells.size() - 2]);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("gradcheck passes and catches an injected fault") {
  const Invocation ok = red_cli({"gradcheck"});
  CHECK(ok.code == 0);
  CHECK(ok.out.find("PASS") != std::string::npos);

  const Invocation bad = red_cli({"gradcheck", "--inject-fault", "head.fc0.b"});
  CHECK(bad.code == red::cli::kNumericError);
  CHECK(bad.out.find("head.fc0.b[") != std::string::npos);
  CHECK(bad.out.find("FAIL") != std::string::npos);

  CHECK(red_cli({"gradcheck", "--inject-fault", "no.such"}).code == red::cli::kDataError);
}

TEST_CASE("the installed binary reports exit codes") {
  const std::string bin = RED_CLI_PATH;
  const auto status = [&](const std::string& args) {
    const int raw = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  };
  CHECK(status("gradcheck") == 0);
  CHECK(status("detect --checkpoint x --data y --top-k 1 --log-likelihood-threshold 0") == 2);
  CHECK(status("eval --checkpoint /nonexistent/model.ckpt --data y") == 3);
}
