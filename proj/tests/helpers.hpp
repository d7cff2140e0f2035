#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <doctest.h>

#include "red/conditional_gmm.hpp"
#include "red/model.hpp"
#include "red/transforms.hpp"

namespace testing {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b));
}

// Magnitude in [0.5, 1.5] with a random sign.
inline double well_conditioned(red::Rng& rng) {
  const double m = 0.5 + rng.uniform();
  return rng.uniform() < 0.5 ? -m : m;
}

inline red::LinearLU random_linear(std::size_t d, red::Rng& rng) {
  const double off = 0.5 / std::sqrt(static_cast<double>(d));
  red::LinearLU p = red::LinearLU::identity(d);
  for (double& v : p.lower) v = off * rng.normal();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      p.upper_ref(i, j) = (i == j) ? well_conditioned(rng) : off * rng.normal();
    }
  }
  for (double& v : p.offset) v = 0.5 * rng.normal();
  return p;
}

inline red::RecurrentTransform random_recurrent(std::size_t d, std::size_t h, double alpha,
                                                red::Rng& rng) {
  red::RecurrentTransform p = red::RecurrentTransform::identity(d, h, alpha);
  p.scale = well_conditioned(rng);
  p.shift = 0.3 * rng.normal();
  for (double& v : p.out_weights) v = 0.2 * rng.normal();
  for (double& v : p.in_weights) v = 0.4 * rng.normal();
  for (double& v : p.rec_weights) v = 0.2 * rng.normal();
  for (double& v : p.hidden_bias) v = 0.3 * rng.normal();
  return p;
}

inline red::TransformStack random_stack(std::size_t d, std::size_t h, double alpha,
                                        red::Rng& rng) {
  red::TransformStack s;
  s.linear = random_linear(d, rng);
  s.forward = random_recurrent(d, h, alpha, rng);
  s.backward = random_recurrent(d, h, alpha, rng);
  return s;
}

inline red::Vector random_vector(std::size_t n, red::Rng& rng, double scale = 1.0) {
  red::Vector v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// Central differences of f over every entry exposed by params(obj),
// compared against the matching entries of params(grads).
template <class T>
void check_param_gradients(T& obj, const T& grads,
                           const std::function<std::vector<red::ParamRef>(T&)>& params,
                           const std::function<double(const T&)>& f, double eps, double tol) {
  T grads_copy = grads;
  auto analytic = params(grads_copy);
  auto refs = params(obj);
  REQUIRE(analytic.size() == refs.size());
  for (std::size_t p = 0; p < refs.size(); ++p) {
    for (std::size_t k = 0; k < refs[p].values.size(); ++k) {
      double& v = refs[p].values[k];
      const double saved = v;
      v = saved + eps;
      const double up = f(obj);
      v = saved - eps;
      const double down = f(obj);
      v = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p].values[k];
      INFO(refs[p].name << "[" << k << "] analytic=" << a << " numeric=" << numeric);
      CHECK(rel_error(a, numeric) < tol);
    }
  }
}

}  // namespace testing
