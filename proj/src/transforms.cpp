#include "red/transforms.hpp"

#include <cmath>
#include <string>

#include "red/errors.hpp"

namespace red {

namespace {

void check_dim(std::size_t expected, std::size_t got, const char* what) {
  if (expected != got) {
    throw ShapeError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                     ", got " + std::to_string(got));
  }
}

void check_diagonal(const LinearLU& p) {
  for (std::size_t i = 0; i < p.dim; ++i) {
    if (std::abs(p.upper_at(i, i)) < kSingularityFloor) {
      throw SingularityError("linear transform: |U[" + std::to_string(i) + "," +
                             std::to_string(i) + "]| below singularity floor");
    }
  }
}

void check_scale(const RecurrentTransform& p) {
  if (!(std::abs(p.scale) >= kSingularityFloor)) {
    throw SingularityError("recurrent transform: |y| below singularity floor");
  }
}

// Position of the k-th processed element for a scan direction.
inline std::size_t step_index(std::size_t k, std::size_t d, bool reversed) {
  return reversed ? d - 1 - k : k;
}

template <class Ref, class Self>
void collect_linear(Self& self, const std::string& prefix, std::vector<Ref>& out) {
  out.push_back({prefix + "L", {self.dim * (self.dim - 1) / 2}, self.lower});
  out.push_back({prefix + "U", {self.dim * (self.dim + 1) / 2}, self.upper});
  out.push_back({prefix + "b", {self.dim}, self.offset});
}

template <class Ref, class Self>
void collect_recurrent(Self& self, const std::string& prefix, std::vector<Ref>& out) {
  out.push_back({prefix + "y", {}, {&self.scale, 1}});
  out.push_back({prefix + "b", {}, {&self.shift, 1}});
  out.push_back({prefix + "w", {self.hidden}, self.out_weights});
  out.push_back({prefix + "u", {self.hidden}, self.in_weights});
  out.push_back({prefix + "V", {self.hidden, self.hidden}, self.rec_weights});
  out.push_back({prefix + "a", {self.hidden}, self.hidden_bias});
}

}  // namespace

double leaky_relu(double s, double alpha) { return s >= 0.0 ? s : alpha * s; }

double leaky_relu_derivative(double s, double alpha) { return s >= 0.0 ? 1.0 : alpha; }

double leaky_relu_inverse(double z, double alpha) { return z >= 0.0 ? z : z / alpha; }

LinearLU LinearLU::identity(std::size_t dim) {
  LinearLU p;
  p.dim = dim;
  p.lower.assign(dim * (dim - 1) / 2, 0.0);
  p.upper.assign(dim * (dim + 1) / 2, 0.0);
  p.offset.assign(dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) {
    p.upper_ref(i, i) = 1.0;
  }
  return p;
}

Matrix LinearLU::dense() const {
  Matrix a(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k <= std::min(i, j); ++k) {
        const double l = (k == i) ? 1.0 : lower_at(i, k);
        acc += l * upper_at(k, j);
      }
      a(i, j) = acc;
    }
  }
  return a;
}

void LinearLU::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  collect_linear(*this, prefix, out);
}
void LinearLU::collect(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  collect_linear(*this, prefix, out);
}

RecurrentTransform RecurrentTransform::identity(std::size_t dim, std::size_t hidden,
                                                double alpha) {
  if (!(alpha > 0.0)) {
    throw DomainError("recurrent transform: alpha must be positive");
  }
  RecurrentTransform p;
  p.dim = dim;
  p.hidden = hidden;
  p.alpha = alpha;
  p.out_weights.assign(hidden, 0.0);
  p.in_weights.assign(hidden, 1.0);
  p.rec_weights.assign(hidden * hidden, 0.0);
  p.hidden_bias.assign(hidden, 0.0);
  return p;
}

void RecurrentTransform::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  collect_recurrent(*this, prefix, out);
}
void RecurrentTransform::collect(const std::string& prefix,
                                 std::vector<ConstParamRef>& out) const {
  collect_recurrent(*this, prefix, out);
}

TransformStack TransformStack::identity(std::size_t dim, std::size_t hidden, double alpha) {
  return {LinearLU::identity(dim), RecurrentTransform::identity(dim, hidden, alpha),
          RecurrentTransform::identity(dim, hidden, alpha)};
}

void TransformStack::collect(std::vector<ParamRef>& out) {
  linear.collect("linear.", out);
  forward.collect("fwd.", out);
  backward.collect("bwd.", out);
}
void TransformStack::collect(std::vector<ConstParamRef>& out) const {
  linear.collect("linear.", out);
  forward.collect("fwd.", out);
  backward.collect("bwd.", out);
}

StageOutput linear_forward(const LinearLU& p, std::span<const double> x, LinearCache* cache) {
  const std::size_t d = p.dim;
  check_dim(d, x.size(), "linear_forward");
  check_diagonal(p);

  Vector ux(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = i; j < d; ++j) {
      acc += p.upper_at(i, j) * x[j];
    }
    ux[i] = acc;
  }
  StageOutput out;
  out.z.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = ux[i];
    for (std::size_t j = 0; j < i; ++j) {
      acc += p.lower_at(i, j) * ux[j];
    }
    out.z[i] = acc + p.offset[i];
    out.logdet += std::log(std::abs(p.upper_at(i, i)));
  }
  if (cache != nullptr) {
    cache->input.assign(x.begin(), x.end());
    cache->upper_out = std::move(ux);
  }
  return out;
}

Vector linear_inverse(const LinearLU& p, std::span<const double> z) {
  const std::size_t d = p.dim;
  check_dim(d, z.size(), "linear_inverse");
  check_diagonal(p);

  // L y = z - b, forward substitution (unit diagonal).
  Vector y(d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = z[i] - p.offset[i];
    for (std::size_t j = 0; j < i; ++j) {
      acc -= p.lower_at(i, j) * y[j];
    }
    y[i] = acc;
  }
  // U x = y, back substitution.
  Vector x(d);
  for (std::size_t i = d; i-- > 0;) {
    double acc = y[i];
    for (std::size_t j = i + 1; j < d; ++j) {
      acc -= p.upper_at(i, j) * x[j];
    }
    x[i] = acc / p.upper_at(i, i);
  }
  return x;
}

StageOutput recurrent_forward(const RecurrentTransform& p, std::span<const double> x,
                              bool reversed, RecurrentCache* cache) {
  const std::size_t d = p.dim;
  const std::size_t hs = p.hidden;
  check_dim(d, x.size(), "recurrent_forward");
  check_scale(p);

  if (cache != nullptr) {
    cache->reversed = reversed;
    cache->input.assign(x.begin(), x.end());
    cache->pre.assign(d, 0.0);
    cache->hidden_prev.assign(d * hs, 0.0);
    cache->hidden_pre.assign(d * hs, 0.0);
  }

  StageOutput out;
  out.z.assign(d, 0.0);
  out.logdet = static_cast<double>(d) * std::log(std::abs(p.scale));
  const double log_alpha = std::log(p.alpha);

  Vector h(hs, 0.0);
  Vector s(hs);
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t i = step_index(k, d, reversed);
    double pre = p.scale * x[i] + p.shift;
    for (std::size_t j = 0; j < hs; ++j) {
      pre += p.out_weights[j] * h[j];
    }
    out.z[i] = leaky_relu(pre, p.alpha);
    if (pre < 0.0) {
      out.logdet += log_alpha;
    }
    for (std::size_t r = 0; r < hs; ++r) {
      double acc = p.in_weights[r] * x[i] + p.hidden_bias[r];
      const double* vrow = p.rec_weights.data() + r * hs;
      for (std::size_t c = 0; c < hs; ++c) {
        acc += vrow[c] * h[c];
      }
      s[r] = acc;
    }
    if (cache != nullptr) {
      cache->pre[i] = pre;
      std::copy(h.begin(), h.end(), cache->hidden_prev.begin() + static_cast<std::ptrdiff_t>(i * hs));
      std::copy(s.begin(), s.end(), cache->hidden_pre.begin() + static_cast<std::ptrdiff_t>(i * hs));
    }
    for (std::size_t r = 0; r < hs; ++r) {
      h[r] = s[r] > 0.0 ? s[r] : 0.0;
    }
  }
  return out;
}

Vector recurrent_inverse(const RecurrentTransform& p, std::span<const double> z, bool reversed) {
  const std::size_t d = p.dim;
  const std::size_t hs = p.hidden;
  check_dim(d, z.size(), "recurrent_inverse");
  check_scale(p);
  if (!(p.alpha > 0.0)) {
    throw DomainError("recurrent_inverse: alpha must be positive");
  }

  Vector x(d, 0.0);
  Vector h(hs, 0.0);
  Vector s(hs);
  for (std::size_t k = 0; k < d; ++k) {
    const std::size_t i = step_index(k, d, reversed);
    double carry = p.shift;
    for (std::size_t j = 0; j < hs; ++j) {
      carry += p.out_weights[j] * h[j];
    }
    x[i] = (leaky_relu_inverse(z[i], p.alpha) - carry) / p.scale;
    for (std::size_t r = 0; r < hs; ++r) {
      double acc = p.in_weights[r] * x[i] + p.hidden_bias[r];
      const double* vrow = p.rec_weights.data() + r * hs;
      for (std::size_t c = 0; c < hs; ++c) {
        acc += vrow[c] * h[c];
      }
      s[r] = acc;
    }
    for (std::size_t r = 0; r < hs; ++r) {
      h[r] = s[r] > 0.0 ? s[r] : 0.0;
    }
  }
  return x;
}

StageOutput stack_forward(const TransformStack& s, std::span<const double> x, StackCache* cache) {
  StageOutput lin = linear_forward(s.linear, x, cache ? &cache->linear : nullptr);
  StageOutput fwd = recurrent_forward(s.forward, lin.z, false, cache ? &cache->forward : nullptr);
  StageOutput bwd = recurrent_forward(s.backward, fwd.z, true, cache ? &cache->backward : nullptr);
  bwd.logdet += lin.logdet + fwd.logdet;
  return bwd;
}

Vector stack_inverse(const TransformStack& s, std::span<const double> z) {
  const Vector fwd = recurrent_inverse(s.backward, z, true);
  const Vector lin = recurrent_inverse(s.forward, fwd, false);
  return linear_inverse(s.linear, lin);
}

Vector linear_vjp(const LinearLU& p, const LinearCache& cache, std::span<const double> grad_z,
                  double grad_logdet, LinearLU& grads) {
  const std::size_t d = p.dim;
  if (cache.input.size() != d || cache.upper_out.size() != d) {
    throw ContractError("linear_vjp: forward cache missing");
  }
  check_dim(d, grad_z.size(), "linear_vjp");

  // z = L y + b with y = U x.
  Vector grad_y(grad_z.begin(), grad_z.end());
  for (std::size_t i = 0; i < d; ++i) {
    grads.offset[i] += grad_z[i];
    for (std::size_t j = 0; j < i; ++j) {
      grads.lower_ref(i, j) += grad_z[i] * cache.upper_out[j];
      grad_y[j] += p.lower_at(i, j) * grad_z[i];
    }
  }
  Vector grad_x(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      grads.upper_ref(i, j) += grad_y[i] * cache.input[j];
      grad_x[j] += p.upper_at(i, j) * grad_y[i];
    }
    grads.upper_ref(i, i) += grad_logdet / p.upper_at(i, i);
  }
  return grad_x;
}

Vector recurrent_vjp(const RecurrentTransform& p, const RecurrentCache& cache,
                     std::span<const double> grad_z, double grad_logdet,
                     RecurrentTransform& grads) {
  const std::size_t d = p.dim;
  const std::size_t hs = p.hidden;
  if (cache.input.size() != d || cache.hidden_prev.size() != d * hs) {
    throw ContractError("recurrent_vjp: forward cache missing");
  }
  check_dim(d, grad_z.size(), "recurrent_vjp");

  // Only the d log|y| term of the log-determinant has a nonzero derivative;
  // the log r'_alpha terms are piecewise constant.
  grads.scale += grad_logdet * static_cast<double>(d) / p.scale;

  Vector grad_x(d, 0.0);
  Vector grad_h(hs, 0.0);  // dL/dh_k for the state produced by the current step
  Vector grad_s(hs);
  Vector grad_h_prev(hs);
  for (std::size_t k = d; k-- > 0;) {
    const std::size_t i = step_index(k, d, cache.reversed);
    const double xi = cache.input[i];
    const double* h_prev = cache.hidden_prev.data() + i * hs;
    const double* s = cache.hidden_pre.data() + i * hs;

    const double grad_pre = grad_z[i] * leaky_relu_derivative(cache.pre[i], p.alpha);
    for (std::size_t r = 0; r < hs; ++r) {
      grad_s[r] = s[r] > 0.0 ? grad_h[r] : 0.0;
    }

    grads.scale += grad_pre * xi;
    grads.shift += grad_pre;
    double gx = grad_pre * p.scale;
    for (std::size_t j = 0; j < hs; ++j) {
      grads.out_weights[j] += grad_pre * h_prev[j];
      grad_h_prev[j] = grad_pre * p.out_weights[j];
    }
    for (std::size_t r = 0; r < hs; ++r) {
      const double g = grad_s[r];
      if (g == 0.0) {
        continue;
      }
      grads.in_weights[r] += g * xi;
      grads.hidden_bias[r] += g;
      gx += g * p.in_weights[r];
      const double* vrow = p.rec_weights.data() + r * hs;
      double* gvrow = grads.rec_weights.data() + r * hs;
      for (std::size_t c = 0; c < hs; ++c) {
        gvrow[c] += g * h_prev[c];
        grad_h_prev[c] += g * vrow[c];
      }
    }
    grad_x[i] = gx;
    grad_h.swap(grad_h_prev);
  }
  return grad_x;
}

Vector stack_vjp(const TransformStack& s, const StackCache& cache, std::span<const double> grad_z,
                 double grad_logdet, TransformStack& grads) {
  const Vector g_fwd = recurrent_vjp(s.backward, cache.backward, grad_z, grad_logdet, grads.backward);
  const Vector g_lin = recurrent_vjp(s.forward, cache.forward, g_fwd, grad_logdet, grads.forward);
  return linear_vjp(s.linear, cache.linear, g_lin, grad_logdet, grads.linear);
}

void project_constraints(TransformStack& s) {
  const auto floor_magnitude = [](double& v) {
    if (std::abs(v) < kSingularityFloor) {
      v = std::signbit(v) ? -kSingularityFloor : kSingularityFloor;
    }
  };
  for (std::size_t i = 0; i < s.linear.dim; ++i) {
    floor_magnitude(s.linear.upper_ref(i, i));
  }
  floor_magnitude(s.forward.scale);
  floor_magnitude(s.backward.scale);
}

}  // namespace red
