#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "red/numerics.hpp"

namespace red {

struct Dataset {
  Matrix x;
  std::optional<std::vector<int>> labels;  // 1 = anomaly
  std::vector<std::string> column_names;
  std::string source;
  std::size_t rejected_rows = 0;  // rows dropped for non-finite values

  std::size_t size() const { return x.rows(); }
  std::size_t dim() const { return x.cols(); }
  Dataset subset(std::span<const std::size_t> rows) const;
  // Rows whose label is 0, or every row when unlabeled.
  Dataset inliers() const;
};

/// Reads a comma-separated file. Numeric columns become doubles; the
/// optional label column must hold 0 or 1. Rows with NaN/Inf are skipped
/// and counted. Row numbers in errors count data rows from 1, columns
/// count from 1.
Dataset load_csv(const std::filesystem::path& path, bool has_header,
                 const std::optional<std::string>& label_column = std::nullopt);

void write_csv(const std::filesystem::path& path, const Matrix& x,
               const std::vector<std::string>& column_names,
               const std::optional<std::vector<int>>& labels = std::nullopt,
               const std::string& label_column = "label");

/// Per-column standardization, fitted on training rows only. Uses the
/// population (1/N) standard deviation, floored at 1e-6.
struct Scaler {
  Vector mean;
  Vector std;

  static Scaler fit(const Matrix& train);
  Matrix apply(const Matrix& x) const;
  Dataset apply(const Dataset& ds) const;
  Matrix inverse(const Matrix& z) const;
  // log|d standardized / d original| = -sum log std. Adding it to a
  // log-density on standardized data gives the density in original units.
  double log_jacobian() const;

  nlohmann::json to_json() const;
  static Scaler from_json(const nlohmann::json& j);
};

inline constexpr double kScalerStdFloor = 1e-6;

Matrix add_noise(const Matrix& x, double std, Rng& rng);

struct Splits {
  Dataset train, val, test;
};

/// Seeded split into train/val/test. With stratify_labels, anomalies and
/// inliers are split separately so each part keeps the anomaly rate.
Splits split(const Dataset& ds, const std::array<double, 3>& fractions, Rng& rng,
             bool stratify_labels);

/// Dataset manifest (JSON): where the data lives and how to prepare it.
struct DatasetManifest {
  std::filesystem::path path;
  bool has_header = true;
  std::optional<std::string> label_column;
  std::array<double, 3> fractions{0.8, 0.1, 0.1};
  std::uint64_t seed = 0;
  double noise_std = 0.01;
  bool noise_per_epoch = false;
  bool stratify = true;
};

DatasetManifest dataset_manifest_from_json(const nlohmann::json& j,
                                           const std::filesystem::path& base_dir = {});
nlohmann::json to_json(const DatasetManifest& m);

struct PreparedData {
  Splits raw;        // original units, no noise
  Splits standardized;
  Scaler scaler;
};

/// load -> split -> fit scaler on train -> standardize all -> noise on train.
/// Noise is skipped when noise_per_epoch is set; training adds it per epoch.
PreparedData prepare_data(const DatasetManifest& manifest);
PreparedData prepare_data(const Dataset& ds, const DatasetManifest& manifest);

}  // namespace red
