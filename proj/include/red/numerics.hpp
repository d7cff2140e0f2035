#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace red {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles. Rows are the unit of iteration
/// everywhere in the library (one row = one data point).
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  // New matrix holding the listed rows, in the given order.
  Matrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Seeded generator with a platform-stable stream.
///
/// Bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. Uniform and normal variates are derived here rather than
/// through <random> distributions, which are implementation-defined:
///   uniform() = (bits >> 11) * 2^-53, in [0, 1)
///   normal()  = Box-Muller on two uniforms, second variate cached.
/// An Rng is single-owner. Parallel code derives per-task generators with
/// derive_seed().
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  double uniform();
  double normal();
  // Unbiased integer in [0, n) by rejection sampling.
  std::size_t uniform_index(std::size_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_normal_;
};

/// SplitMix64 finalizer applied to (base, stream). Used to give each
/// parallel task, grid run, or sample row an independent generator.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// log(sum(exp(v))) with max-shift. Returns -inf iff every entry is -inf.
double log_sum_exp(std::span<const double> v);

/// Log density of N(mu, sigma^2) at z. Throws DomainError for sigma <= 0;
/// NaN arguments give NaN.
double gaussian_logpdf(double z, double mu, double sigma);

Vector draw_standard_normal(Rng& rng, std::size_t n);

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central-difference gradient (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Throws NumericError naming the coordinate if f is non-finite at a probe.
Vector finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double eps);

/// Full central-difference Jacobian of a vector map; row i holds d out_i / d x.
Matrix finite_diff_jacobian(const std::function<Vector(std::span<const double>)>& f,
                            std::span<const double> x, double eps);

inline double sigmoid(double s) {
  if (s >= 0.0) {
    return 1.0 / (1.0 + std::exp(-s));
  }
  const double e = std::exp(s);
  return e / (1.0 + e);
}

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

}  // namespace red
