#include "red/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "red/errors.hpp"

namespace red {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' ||
                        s.back() == '"')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::optional<double> parse_double(std::string_view s) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) {
    return std::nullopt;
  }
  return v;
}

// Round-to-nearest allocation of n items over three fractions; the last
// part takes the remainder.
std::array<std::size_t, 3> split_counts(std::size_t n, const std::array<double, 3>& f) {
  const auto a = static_cast<std::size_t>(std::llround(f[0] * static_cast<double>(n)));
  const auto b = static_cast<std::size_t>(std::llround(f[1] * static_cast<double>(n)));
  const std::size_t first = std::min(a, n);
  const std::size_t second = std::min(b, n - first);
  return {first, second, n - first - second};
}

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.uniform_index(i)]);
  }
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.x = x.select_rows(rows);
  if (labels) {
    std::vector<int> l;
    l.reserve(rows.size());
    for (std::size_t r : rows) l.push_back((*labels)[r]);
    out.labels = std::move(l);
  }
  out.column_names = column_names;
  out.source = source;
  return out;
}

Dataset Dataset::inliers() const {
  if (!labels) return *this;
  std::vector<std::size_t> keep;
  for (std::size_t r = 0; r < size(); ++r) {
    if ((*labels)[r] == 0) keep.push_back(r);
  }
  return subset(keep);
}

Dataset load_csv(const std::filesystem::path& path, bool has_header,
                 const std::optional<std::string>& label_column) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("cannot open data file '" + path.string() + "'");
  }
  Dataset ds;
  ds.source = path.string();

  std::string line;
  std::vector<std::string> header;
  std::size_t width = 0;
  std::optional<std::size_t> label_index;

  if (has_header) {
    while (std::getline(in, line) && trim(line).empty()) {
    }
    for (auto f : split_fields(line)) header.emplace_back(f);
    width = header.size();
  }
  if (label_column) {
    if (!has_header) {
      throw MissingColumnError("label column '" + *label_column + "' requires a header row");
    }
    const auto it = std::find(header.begin(), header.end(), *label_column);
    if (it == header.end()) {
      throw MissingColumnError("label column '" + *label_column + "' not found in '" +
                               path.string() + "'");
    }
    label_index = static_cast<std::size_t>(it - header.begin());
  }

  std::vector<double> values;
  std::vector<int> labels;
  std::vector<double> row;
  std::size_t data_row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++data_row;
    const auto fields = split_fields(line);
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw RaggedRowError("row " + std::to_string(data_row) + " has " +
                           std::to_string(fields.size()) + " fields, expected " +
                           std::to_string(width));
    }
    row.clear();
    bool finite = true;
    int label = 0;
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const auto v = parse_double(fields[c]);
      if (!v) {
        throw ParseError("cannot parse '" + std::string(fields[c]) + "' as a number at row " +
                         std::to_string(data_row) + ", column " + std::to_string(c + 1));
      }
      if (label_index && c == *label_index) {
        if (*v != 0.0 && *v != 1.0) {
          throw LabelDomainError("label must be 0 or 1, got '" + std::string(fields[c]) +
                                 "' at row " + std::to_string(data_row) + ", column " +
                                 std::to_string(c + 1));
        }
        label = static_cast<int>(*v);
        continue;
      }
      finite = finite && std::isfinite(*v);
      row.push_back(*v);
    }
    if (!finite) {
      ++ds.rejected_rows;
      continue;
    }
    values.insert(values.end(), row.begin(), row.end());
    if (label_index) labels.push_back(label);
  }

  const std::size_t cols = width - (label_index ? 1 : 0);
  if (has_header) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!label_index || c != *label_index) ds.column_names.push_back(header[c]);
    }
  } else {
    for (std::size_t c = 0; c < cols; ++c) ds.column_names.push_back("x" + std::to_string(c + 1));
  }
  const std::size_t rows = cols == 0 ? 0 : values.size() / cols;
  ds.x = Matrix(rows, cols, std::move(values));
  if (label_index) ds.labels = std::move(labels);
  return ds;
}

void write_csv(const std::filesystem::path& path, const Matrix& x,
               const std::vector<std::string>& column_names,
               const std::optional<std::vector<int>>& labels, const std::string& label_column) {
  std::ofstream out(path);
  if (!out) {
    throw Error("cannot write '" + path.string() + "'");
  }
  out.precision(17);
  for (std::size_t c = 0; c < column_names.size(); ++c) {
    out << (c ? "," : "") << column_names[c];
  }
  if (labels) out << "," << label_column;
  out << "\n";
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      out << (c ? "," : "") << x(r, c);
    }
    if (labels) out << "," << (*labels)[r];
    out << "\n";
  }
}

Scaler Scaler::fit(const Matrix& train) {
  if (train.rows() < 2) {
    throw ContractError("scaler: at least 2 rows are needed to fit");
  }
  const std::size_t n = train.rows();
  const std::size_t d = train.cols();
  Scaler s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) s.mean[c] += train(r, c);
  }
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double dev = train(r, c) - s.mean[c];
      s.std[c] += dev * dev;
    }
  }
  for (double& v : s.std) v = std::max(std::sqrt(v / static_cast<double>(n)), kScalerStdFloor);
  return s;
}

Matrix Scaler::apply(const Matrix& x) const {
  if (x.cols() != mean.size()) {
    throw ShapeError("scaler fitted on " + std::to_string(mean.size()) + " columns, data has " +
                     std::to_string(x.cols()));
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mean[c]) / std[c];
  }
  return out;
}

Dataset Scaler::apply(const Dataset& ds) const {
  Dataset out = ds;
  out.x = apply(ds.x);
  return out;
}

Matrix Scaler::inverse(const Matrix& z) const {
  if (z.cols() != mean.size()) {
    throw ShapeError("scaler fitted on " + std::to_string(mean.size()) + " columns, data has " +
                     std::to_string(z.cols()));
  }
  Matrix out(z.rows(), z.cols());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = z(r, c) * std[c] + mean[c];
  }
  return out;
}

double Scaler::log_jacobian() const {
  double acc = 0.0;
  for (double s : std) acc -= std::log(s);
  return acc;
}

nlohmann::json Scaler::to_json() const { return {{"mean", mean}, {"std", std}}; }

Scaler Scaler::from_json(const nlohmann::json& j) {
  Scaler s;
  s.mean = j.at("mean").get<Vector>();
  s.std = j.at("std").get<Vector>();
  if (s.mean.size() != s.std.size()) {
    throw ShapeError("scaler: mean and std lengths differ");
  }
  return s;
}

Matrix add_noise(const Matrix& x, double std, Rng& rng) {
  if (!(std >= 0.0)) {
    throw DomainError("add_noise: std must be non-negative");
  }
  Matrix out = x;
  if (std == 0.0) return out;
  for (double& v : out.data()) v += std * rng.normal();
  return out;
}

Splits split(const Dataset& ds, const std::array<double, 3>& fractions, Rng& rng,
             bool stratify_labels) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw DomainError("split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw DomainError("split fractions must sum to 1");
  }

  std::vector<std::vector<std::size_t>> groups;
  if (stratify_labels && ds.labels) {
    groups.resize(2);
    for (std::size_t r = 0; r < ds.size(); ++r) groups[(*ds.labels)[r] != 0].push_back(r);
  } else {
    groups.emplace_back(ds.size());
    std::iota(groups[0].begin(), groups[0].end(), std::size_t{0});
  }

  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& g : groups) {
    shuffle(g, rng);
    const auto counts = split_counts(g.size(), fractions);
    std::size_t pos = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p].insert(parts[p].end(), g.begin() + static_cast<std::ptrdiff_t>(pos),
                      g.begin() + static_cast<std::ptrdiff_t>(pos + counts[p]));
      pos += counts[p];
    }
  }
  static constexpr const char* kNames[3] = {"train", "validation", "test"};
  for (std::size_t p = 0; p < 3; ++p) {
    if (parts[p].empty()) {
      throw DataError(std::string(kNames[p]) + " split would be empty; need more rows");
    }
    std::sort(parts[p].begin(), parts[p].end());
  }
  return {ds.subset(parts[0]), ds.subset(parts[1]), ds.subset(parts[2])};
}

DatasetManifest dataset_manifest_from_json(const nlohmann::json& j,
                                           const std::filesystem::path& base_dir) {
  DatasetManifest m;
  std::filesystem::path p = j.at("path").get<std::string>();
  m.path = (p.is_relative() && !base_dir.empty()) ? base_dir / p : p;
  m.has_header = j.value("has_header", m.has_header);
  if (j.contains("label_column") && !j["label_column"].is_null()) {
    m.label_column = j["label_column"].get<std::string>();
  }
  if (j.contains("split")) {
    const auto f = j["split"].get<std::vector<double>>();
    if (f.size() != 3) throw DomainError("manifest 'split' needs three fractions");
    m.fractions = {f[0], f[1], f[2]};
  }
  m.seed = j.value("seed", m.seed);
  m.noise_std = j.value("noise_std", m.noise_std);
  m.noise_per_epoch = j.value("noise_per_epoch", m.noise_per_epoch);
  m.stratify = j.value("stratify", m.stratify);
  return m;
}

nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j{{"path", m.path.string()},
                   {"has_header", m.has_header},
                   {"split", {m.fractions[0], m.fractions[1], m.fractions[2]}},
                   {"seed", m.seed},
                   {"noise_std", m.noise_std},
                   {"noise_per_epoch", m.noise_per_epoch},
                   {"stratify", m.stratify}};
  j["label_column"] = m.label_column ? nlohmann::json(*m.label_column) : nlohmann::json(nullptr);
  return j;
}

PreparedData prepare_data(const Dataset& ds, const DatasetManifest& manifest) {
  PreparedData out;
  Rng split_rng(derive_seed(manifest.seed, 1));
  out.raw = split(ds, manifest.fractions, split_rng, manifest.stratify);
  out.scaler = Scaler::fit(out.raw.train.x);
  out.standardized.train = out.scaler.apply(out.raw.train);
  out.standardized.val = out.scaler.apply(out.raw.val);
  out.standardized.test = out.scaler.apply(out.raw.test);
  if (!manifest.noise_per_epoch) {
    Rng noise_rng(derive_seed(manifest.seed, 2));
    out.standardized.train.x = add_noise(out.standardized.train.x, manifest.noise_std, noise_rng);
  }
  return out;
}

PreparedData prepare_data(const DatasetManifest& manifest) {
  return prepare_data(load_csv(manifest.path, manifest.has_header, manifest.label_column),
                      manifest);
}

}  // namespace red
