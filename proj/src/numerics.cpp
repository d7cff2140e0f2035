#include "red/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>

#include "red/errors.hpp"

namespace red {

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data holds " + std::to_string(data_.size()) + " values, expected " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= rows_) {
      throw ContractError("row index out of range");
    }
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(indices[k] * cols_), cols_,
                out.data_.begin() + static_cast<std::ptrdiff_t>(k * cols_));
  }
  return out;
}

Rng::Rng(std::uint64_t seed) : engine_(seed) {}

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  if (spare_normal_) {
    const double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) {
    throw ContractError("uniform_index: empty range");
  }
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t bits = engine_();
  while (bits >= limit) {
    bits = engine_();
  }
  return static_cast<std::size_t>(bits % bound);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) {
    throw ContractError("log_sum_exp: empty input");
  }
  const double top = *std::max_element(v.begin(), v.end());
  if (top == -std::numeric_limits<double>::infinity()) {
    return top;
  }
  double acc = 0.0;
  for (double x : v) {
    acc += std::exp(x - top);
  }
  return top + std::log(acc);
}

double gaussian_logpdf(double z, double mu, double sigma) {
  if (sigma <= 0.0) {
    throw DomainError("gaussian_logpdf: sigma must be positive, got " + std::to_string(sigma));
  }
  const double t = (z - mu) / sigma;
  return -0.5 * kLogTwoPi - std::log(sigma) - 0.5 * t * t;
}

Vector draw_standard_normal(Rng& rng, std::size_t n) {
  if (n == 0) {
    throw ContractError("draw_standard_normal: n must be at least 1");
  }
  Vector out(n);
  for (double& v : out) {
    v = rng.normal();
  }
  return out;
}

Vector finite_diff_gradient(const ScalarFunction& f, std::span<const double> x, double eps) {
  if (!(eps > 0.0)) {
    throw DomainError("finite_diff_gradient: eps must be positive");
  }
  Vector probe(x.begin(), x.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + eps;
    const double up = f(probe);
    probe[i] = x[i] - eps;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_gradient: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

Matrix finite_diff_jacobian(const std::function<Vector(std::span<const double>)>& f,
                            std::span<const double> x, double eps) {
  Vector probe(x.begin(), x.end());
  const std::size_t n = x.size();
  Matrix jac;
  for (std::size_t j = 0; j < n; ++j) {
    probe[j] = x[j] + eps;
    const Vector up = f(probe);
    probe[j] = x[j] - eps;
    const Vector down = f(probe);
    probe[j] = x[j];
    if (j == 0) {
      jac = Matrix(up.size(), n);
    }
    for (std::size_t i = 0; i < up.size(); ++i) {
      jac(i, j) = (up[i] - down[i]) / (2.0 * eps);
    }
  }
  return jac;
}

}  // namespace red
