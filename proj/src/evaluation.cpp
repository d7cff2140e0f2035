#include "red/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "red/errors.hpp"
#include "red/kernels.hpp"

namespace red {

namespace {

std::size_t positives(const RankedScores& rs) {
  if (rs.labels.size() != rs.scores.size()) {
    throw ContractError("ranking has no labels");
  }
  const auto n = static_cast<std::size_t>(std::count(rs.labels.begin(), rs.labels.end(), 1));
  if (n == 0) {
    throw DomainError("recall is undefined: no positive (anomaly) labels");
  }
  return n;
}

}  // namespace

RankedScores rank_scores(Vector scores, std::vector<int> labels) {
  if (!labels.empty() && labels.size() != scores.size()) {
    throw ShapeError("rank_scores: labels and scores differ in length");
  }
  RankedScores rs;
  rs.order.resize(scores.size());
  std::iota(rs.order.begin(), rs.order.end(), std::size_t{0});
  std::stable_sort(rs.order.begin(), rs.order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  rs.scores = std::move(scores);
  rs.labels = std::move(labels);
  return rs;
}

RankedScores anomaly_scores(const RedModel& m, const Matrix& x, std::vector<int> labels) {
  return rank_scores(log_prob_rows(m, x), std::move(labels));
}

PrCurve pr_curve(const RankedScores& rs) {
  const std::size_t total_pos = positives(rs);
  PrCurve c;
  c.precision.reserve(rs.order.size());
  c.recall.reserve(rs.order.size());
  std::size_t tp = 0;
  for (std::size_t r = 0; r < rs.order.size(); ++r) {
    tp += rs.labels[rs.order[r]] == 1 ? 1 : 0;
    c.precision.push_back(static_cast<double>(tp) / static_cast<double>(r + 1));
    c.recall.push_back(static_cast<double>(tp) / static_cast<double>(total_pos));
  }
  return c;
}

double average_precision(const RankedScores& rs) {
  const PrCurve c = pr_curve(rs);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t r = 0; r < c.recall.size(); ++r) {
    ap += c.precision[r] * (c.recall[r] - prev_recall);
    prev_recall = c.recall[r];
  }
  return ap;
}

double mean_average_precision(const std::vector<double>& aps) {
  if (aps.empty()) {
    throw ContractError("mean_average_precision: empty list");
  }
  return std::accumulate(aps.begin(), aps.end(), 0.0) / static_cast<double>(aps.size());
}

double ndcg(const RankedScores& rs) {
  const std::size_t total_pos = positives(rs);
  double dcg = 0.0;
  for (std::size_t r = 0; r < rs.order.size(); ++r) {
    if (rs.labels[rs.order[r]] == 1) {
      dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
  }
  double ideal = 0.0;
  for (std::size_t r = 0; r < total_pos; ++r) {
    ideal += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  return dcg / ideal;
}

TTestResult paired_t_test(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) {
    throw ShapeError("paired_t_test: samples differ in length");
  }
  const std::size_t n = a.size();
  if (n < 2) {
    throw ContractError("paired_t_test: need at least two pairs");
  }
  Vector diff(n);
  for (std::size_t i = 0; i < n; ++i) diff[i] = a[i] - b[i];
  const double mean = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : diff) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) {
    throw DomainError("paired_t_test: differences have zero variance (degenerate test)");
  }
  TTestResult out;
  out.dof = n - 1;
  out.mean_difference = mean;
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t_distribution<double> dist(static_cast<double>(out.dof));
  out.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t)));
  return out;
}

NllReport test_nll_report(const RedModel& m, const Matrix& x,
                          const std::optional<std::vector<int>>& labels) {
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (!labels || (*labels)[r] == 0) keep.push_back(r);
  }
  if (keep.empty()) {
    throw DataError("test NLL: no non-anomalous rows to evaluate");
  }
  const Matrix sub = x.select_rows(keep);
  NllReport rep;
  rep.rows_used = keep.size();
  rep.anomalies_excluded = x.rows() - keep.size();
  rep.per_row_nll = log_prob_rows(m, sub);
  double acc = 0.0;
  for (double& v : rep.per_row_nll) {
    v = -v;
    acc += v;
  }
  rep.mean_nll = acc / static_cast<double>(keep.size());
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["dataset"] = dataset;
  j["n"] = n;
  j["d"] = d;
  j["nll"] = {{"mean_nll", nll.mean_nll},
              {"rows_used", nll.rows_used},
              {"anomalies_excluded", nll.anomalies_excluded}};
  if (mean_nll_original_units) j["nll"]["mean_nll_original_units"] = *mean_nll_original_units;
  if (anomaly) {
    j["anomaly"] = {{"anomaly_count", anomaly->anomaly_count},
                    {"average_precision", anomaly->average_precision},
                    {"ndcg", anomaly->ndcg}};
  }
  if (map) j["map"] = *map;
  if (t_test) {
    j["t_test"] = {{"t", t_test->t},
                   {"p_two_sided", t_test->p_two_sided},
                   {"dof", t_test->dof},
                   {"mean_difference", t_test->mean_difference}};
  }
  return j;
}

void write_pr_curve_csv(const PrCurve& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "r,precision,recall\n";
  for (std::size_t r = 0; r < c.precision.size(); ++r) {
    out << r + 1 << "," << c.precision[r] << "," << c.recall[r] << "\n";
  }
}

void write_nll_table_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "Dataset,N,d,RED NLL\n";
  for (const auto& r : reports) {
    out << r.dataset << "," << r.n << "," << r.d << "," << r.nll.mean_nll << "\n";
  }
}

void write_anomaly_table_csv(const std::vector<EvalReport>& reports,
                             const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(10);
  out << "Dataset,Anomaly Count,RED avg-prec\n";
  std::vector<double> aps;
  double ndcg_sum = 0.0;
  for (const auto& r : reports) {
    if (!r.anomaly) continue;
    out << r.dataset << "," << r.anomaly->anomaly_count << "," << r.anomaly->average_precision
        << "\n";
    aps.push_back(r.anomaly->average_precision);
    ndcg_sum += r.anomaly->ndcg;
  }
  if (!aps.empty()) {
    out << "MAP,," << mean_average_precision(aps) << "\n";
    out << "nDCG,," << ndcg_sum / static_cast<double>(aps.size()) << "\n";
  }
}

}  // namespace red
