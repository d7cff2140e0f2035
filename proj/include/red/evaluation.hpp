#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "red/model.hpp"
#include "red/numerics.hpp"

namespace red {

/// Instances ranked by ascending log-likelihood: order[0] is the most
/// anomalous instance (rank 1). Equal scores keep their original order.
struct RankedScores {
  Vector scores;
  std::vector<int> labels;  // empty when unlabeled
  std::vector<std::size_t> order;
};

RankedScores rank_scores(Vector scores, std::vector<int> labels = {});
RankedScores anomaly_scores(const RedModel& m, const Matrix& x, std::vector<int> labels = {});

// Precision and recall after flagging the bottom r instances, r = 1..N.
struct PrCurve {
  Vector precision;
  Vector recall;
};

PrCurve pr_curve(const RankedScores& rs);
// sum_r precision_r * (recall_r - recall_{r-1}), recall_0 = 0.
double average_precision(const RankedScores& rs);
double mean_average_precision(const std::vector<double>& aps);
// Binary gains, log2(rank + 1) discount, no cutoff.
double ndcg(const RankedScores& rs);

struct TTestResult {
  double t = 0.0;
  double p_two_sided = 0.0;
  std::size_t dof = 0;
  double mean_difference = 0.0;
};

// Paired Student t-test on a - b (sample standard deviation, n - 1 dof).
TTestResult paired_t_test(const Vector& a, const Vector& b);

struct NllReport {
  double mean_nll = 0.0;
  std::size_t rows_used = 0;
  std::size_t anomalies_excluded = 0;
  Vector per_row_nll;  // rows_used entries
};

// Mean NLL over label-0 rows (every row when unlabeled).
NllReport test_nll_report(const RedModel& m, const Matrix& x,
                          const std::optional<std::vector<int>>& labels = std::nullopt);

struct AnomalyReport {
  std::size_t anomaly_count = 0;
  double average_precision = 0.0;
  double ndcg = 0.0;
  PrCurve curve;
};

struct EvalReport {
  std::string dataset;
  std::size_t n = 0;
  std::size_t d = 0;
  NllReport nll;
  // NLL in original data units: standardized NLL minus the scaler's log-Jacobian.
  std::optional<double> mean_nll_original_units;
  std::optional<AnomalyReport> anomaly;
  std::optional<double> map;
  std::optional<TTestResult> t_test;

  nlohmann::json to_json() const;
};

void write_pr_curve_csv(const PrCurve& c, const std::filesystem::path& path);
// Table layouts: "Dataset,N,d,RED NLL" and "Dataset,Anomaly Count,RED avg-prec".
void write_nll_table_csv(const std::vector<EvalReport>& reports, const std::filesystem::path& path);
void write_anomaly_table_csv(const std::vector<EvalReport>& reports,
                             const std::filesystem::path& path);

}  // namespace red
