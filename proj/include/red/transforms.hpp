#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "red/numerics.hpp"
#include "red/params.hpp"

namespace red {

// Magnitude floor on U's diagonal and on the recurrent input scale.
inline constexpr double kSingularityFloor = 1e-8;

double leaky_relu(double s, double alpha);
// 1 for s >= 0, alpha for s < 0.
double leaky_relu_derivative(double s, double alpha);
double leaky_relu_inverse(double z, double alpha);

/// Invertible affine map z = L U x + b.
///
/// L is unit lower-triangular with only its strictly-lower part stored,
/// packed row by row: entry (i, j), j < i, lives at i(i-1)/2 + j.
/// U is upper-triangular with its diagonal, packed row by row: entry
/// (i, j), j >= i, lives at i*d - i(i-1)/2 + (j - i).
/// A = LU is never formed.
struct LinearLU {
  std::size_t dim = 0;
  Vector lower;
  Vector upper;
  Vector offset;

  static LinearLU identity(std::size_t dim);

  static std::size_t lower_index(std::size_t i, std::size_t j) { return i * (i - 1) / 2 + j; }
  std::size_t upper_index(std::size_t i, std::size_t j) const {
    return i * dim - i * (i - 1) / 2 + (j - i);
  }
  double lower_at(std::size_t i, std::size_t j) const { return lower[lower_index(i, j)]; }
  double upper_at(std::size_t i, std::size_t j) const { return upper[upper_index(i, j)]; }
  double& upper_ref(std::size_t i, std::size_t j) { return upper[upper_index(i, j)]; }
  double& lower_ref(std::size_t i, std::size_t j) { return lower[lower_index(i, j)]; }

  // Dense L * U, for tests and for callers that want A explicitly.
  Matrix dense() const;

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

/// Recurrent transform of one scan direction:
///   z_i = r_alpha(y x_i + w . h_{i-1} + b)
///   h_i = relu(u x_i + V h_{i-1} + a)
/// with h_0 = 0. For hidden = 1 the vectors u, a and the 1x1 V reduce to
/// scalars. alpha is a fixed hyperparameter and is not learned.
struct RecurrentTransform {
  std::size_t dim = 0;
  std::size_t hidden = 0;
  double alpha = 0.1;
  double scale = 1.0;   // y
  double shift = 0.0;   // b
  Vector out_weights;   // w, hidden
  Vector in_weights;    // u, hidden
  Vector rec_weights;   // V, hidden x hidden row-major
  Vector hidden_bias;   // a, hidden

  // y = 1, u = 1, b = a = 0, w and V zero.
  static RecurrentTransform identity(std::size_t dim, std::size_t hidden, double alpha);

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct TransformStack {
  LinearLU linear;
  RecurrentTransform forward;   // scans i = 1..d
  RecurrentTransform backward;  // scans i = d..1
  std::size_t dim() const { return linear.dim; }

  static TransformStack identity(std::size_t dim, std::size_t hidden, double alpha);

  void collect(std::vector<ParamRef>& out);
  void collect(std::vector<ConstParamRef>& out) const;
};

struct StageOutput {
  Vector z;
  double logdet = 0.0;
};

// Activations kept by a forward pass so the VJP can run without recomputation.
struct LinearCache {
  Vector input;
  Vector upper_out;  // U x
};

struct RecurrentCache {
  bool reversed = false;
  Vector input;
  Vector pre;          // output pre-activations, input-index aligned
  Vector hidden_prev;  // d x hidden: state fed into step i (input-index aligned)
  Vector hidden_pre;   // d x hidden: u x_i + V h_{i-1} + a
};

struct StackCache {
  LinearCache linear;
  RecurrentCache forward;
  RecurrentCache backward;
};

StageOutput linear_forward(const LinearLU& p, std::span<const double> x,
                           LinearCache* cache = nullptr);
Vector linear_inverse(const LinearLU& p, std::span<const double> z);

StageOutput recurrent_forward(const RecurrentTransform& p, std::span<const double> x,
                              bool reversed, RecurrentCache* cache = nullptr);
Vector recurrent_inverse(const RecurrentTransform& p, std::span<const double> z, bool reversed);

StageOutput stack_forward(const TransformStack& s, std::span<const double> x,
                          StackCache* cache = nullptr);
Vector stack_inverse(const TransformStack& s, std::span<const double> z);

// Vector-Jacobian products. Given dL/dz and dL/dlogdet, accumulate the
// parameter gradients into `grads` (same layout as the parameters) and return
// dL/dx.
Vector linear_vjp(const LinearLU& p, const LinearCache& cache, std::span<const double> grad_z,
                  double grad_logdet, LinearLU& grads);
Vector recurrent_vjp(const RecurrentTransform& p, const RecurrentCache& cache,
                     std::span<const double> grad_z, double grad_logdet,
                     RecurrentTransform& grads);
Vector stack_vjp(const TransformStack& s, const StackCache& cache, std::span<const double> grad_z,
                 double grad_logdet, TransformStack& grads);

// Clamp |U_ii| and |y| up to kSingularityFloor, keeping their sign.
void project_constraints(TransformStack& s);

}  // namespace red
