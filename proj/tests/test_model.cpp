#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "oracles.hpp"
#include "red/errors.hpp"
#include "red/kernels.hpp"
#include "red/model.hpp"

using namespace red;

namespace {

ModelConfig small_config(std::size_t d, double alpha = 0.1) {
  ModelConfig c;
  c.dim = d;
  c.num_units = 6;
  c.transform_hidden = 3;
  c.num_components = 3;
  c.alpha = alpha;
  return c;
}

// Identity stack with alpha = 1 (so the leaky units are linear everywhere)
// and a K = 1 head with zero weights: the density is exactly N(0, I).
RedModel standard_normal_model(std::size_t d) {
  ModelConfig c = small_config(d, 1.0);
  c.num_components = 1;
  RedModel m = init_model(c);
  for (auto& p : m.parameters()) std::fill(p.values.begin(), p.values.end(), 0.0);
  m.stack = TransformStack::identity(d, c.transform_hidden, 1.0);
  return m;
}

std::vector<double> latent_of(const RedModel& m, std::span<const double> x) {
  return stack_forward(m.stack, x).z;
}

}  // namespace

TEST_CASE("config validation and JSON round trip") {
  ModelConfig c = small_config(4);
  c.candidate = CandidateActivation::Tanh;
  c.seed = 17;
  c.init_shift = 2.5;
  const nlohmann::json j = c;
  CHECK(j.at("d") == 4);
  CHECK(j.get<ModelConfig>() == c);

  ModelConfig bad = c;
  bad.num_components = 0;
  CHECK_THROWS_AS(bad.validate(), DomainError);
  bad = c;
  bad.alpha = 0.0;
  CHECK_THROWS_AS(init_model(bad), DomainError);
  bad = c;
  bad.init_shift = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("init: equal seeds give identical parameters") {
  ModelConfig c = small_config(5);
  c.seed = 3;
  const RedModel a = init_model(c);
  const RedModel b = init_model(c);
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    CHECK(std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin()));
  }
  c.seed = 4;
  const RedModel other = init_model(c);
  CHECK(other.cond.gru.in_update != a.cond.gru.in_update);
}

TEST_CASE("init: log_prob is finite and moderate on standardized-range data") {
  Rng rng(1);
  for (std::size_t d : {1u, 3u, 8u}) {
    const RedModel m = init_model(small_config(d), rng);
    for (int trial = 0; trial < 200; ++trial) {
      Vector x(d);
      for (double& v : x) v = 8.0 * rng.uniform() - 4.0;
      const double lp = log_prob(m, x);
      CHECK(std::isfinite(lp));
      CHECK(lp >= -10.0 * static_cast<double>(d));
      CHECK(lp <= 10.0 * static_cast<double>(d));
    }
  }
}

TEST_CASE("init: transform stack is identity-like") {
  Rng rng(2);
  for (std::size_t d : {1u, 4u, 8u}) {
    const RedModel m = init_model(small_config(d), rng);
    for (int trial = 0; trial < 200; ++trial) {
      Vector x(d);
      for (double& v : x) v = 10.0 * rng.uniform() - 5.0;
      CHECK(std::abs(stack_forward(m.stack, x).logdet) < 0.5);
    }
  }
}

TEST_CASE("init: a zero shift puts negative inputs on the leaky branch") {
  ModelConfig c = small_config(3);
  c.init_shift = 0.0;
  const RedModel m = init_model(c);
  const Vector x{-3.0, -4.0, 2.0};
  // Two recurrent passes, each contributing log(alpha) per negative coordinate.
  CHECK(stack_forward(m.stack, x).logdet == doctest::Approx(4.0 * std::log(0.1)).epsilon(1e-12));
}

TEST_CASE("log_prob reduces to a standard normal for the identity model") {
  const RedModel m = standard_normal_model(3);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Vector x = testing::random_vector(3, rng, 2.0);
    double expect = 0.0;
    for (double v : x) expect += gaussian_logpdf(v, 0.0, 1.0);
    CHECK(std::abs(log_prob(m, x) - expect) < 1e-12);
  }
}

TEST_CASE("log_prob is logdet plus the conditional term at z(x)") {
  Rng rng(4);
  RedModel m = init_model(small_config(5), rng);
  randomize_parameters(m, rng, 0.3);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = testing::random_vector(5, rng);
    const StageOutput t = stack_forward(m.stack, x);
    CHECK(log_prob(m, x) == t.logdet + conditional_log_likelihood(m.cond, t.z).total);
  }
}

TEST_CASE("log_prob rejects a dimension mismatch") {
  const RedModel m = init_model(small_config(5));
  CHECK_THROWS_AS(log_prob(m, Vector(6, 0.0)), ShapeError);
}

TEST_CASE("normalization: d = 1 and d = 2 quadrature") {
  Rng rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    RedModel m1 = init_model(small_config(1), rng);
    randomize_parameters(m1, rng, 0.1);
    const double mass1 = oracle::trapezoid(
        [&](double a) { return std::exp(log_prob(m1, Vector{a})); }, -8.0, 8.0, 200001);
    CHECK(std::abs(mass1 - 1.0) < 1e-4);

    RedModel m2 = init_model(small_config(2), rng);
    randomize_parameters(m2, rng, 0.1);
    const double mass2 = oracle::trapezoid_2d(
        [&](double a, double b) { return std::exp(log_prob(m2, Vector{a, b})); }, -8.0, 8.0, 400);
    CHECK(std::abs(mass2 - 1.0) < 1e-2);
  }
}

TEST_CASE("full-model gradient matches finite differences") {
  Rng rng(6);
  ModelConfig c = small_config(5);
  c.num_units = 8;
  RedModel m = init_model(c, rng);
  randomize_parameters(m, rng, 0.3);
  const Vector x = testing::random_vector(5, rng);
  RowCache cache;
  log_prob(m, x, &cache);
  RedModel grads = m.zeros_like();
  log_prob_vjp(m, cache, 1.0, grads);
  testing::check_param_gradients<RedModel>(
      m, grads, [](RedModel& r) { return r.parameters(); },
      [&](const RedModel& r) { return log_prob(r, x); }, 1e-5, 1e-4);
}

TEST_CASE("nll: single row, duplicates, and reference summation") {
  Rng rng(7);
  RedModel m = init_model(small_config(3), rng);
  randomize_parameters(m, rng, 0.2);
  Matrix one(1, 3, testing::random_vector(3, rng));
  CHECK(nll(m, one) == -log_prob(m, one.row(0)));

  Matrix dup(4, 3);
  for (std::size_t r = 0; r < 4; ++r) std::copy(one.row(0).begin(), one.row(0).end(), dup.row(r).begin());
  CHECK(nll(m, dup) == doctest::Approx(nll(m, one)).epsilon(1e-15));

  Matrix many(500, 3, testing::random_vector(1500, rng));
  long double acc = 0.0L;
  for (std::size_t r = 0; r < many.rows(); ++r) acc -= log_prob(m, many.row(r));
  CHECK(std::abs(nll(m, many) - static_cast<double>(acc / 500.0L)) < 1e-10);

  CHECK_THROWS_AS(nll(m, Matrix(0, 3)), ContractError);
}

TEST_CASE("sampling: identity model covariance") {
  const RedModel m = standard_normal_model(3);
  Rng rng(8);
  const Matrix s = sample(m, rng, 100000);
  Vector mean(3, 0.0);
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t i = 0; i < 3; ++i) mean[i] += s(r, i);
  }
  for (double& v : mean) v /= static_cast<double>(s.rows());
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double c = 0.0;
      for (std::size_t r = 0; r < s.rows(); ++r) c += (s(r, i) - mean[i]) * (s(r, j) - mean[j]);
      c /= static_cast<double>(s.rows() - 1);
      CHECK(std::abs(c - (i == j ? 1.0 : 0.0)) < 0.03);
    }
  }
}

TEST_CASE("sampling: identity model marginals pass a Kolmogorov-Smirnov test") {
  const RedModel m = standard_normal_model(2);
  Rng rng(9);
  const std::size_t n = 10000;
  const Matrix s = sample(m, rng, n);
  for (std::size_t i = 0; i < 2; ++i) {
    Vector col(n);
    for (std::size_t r = 0; r < n; ++r) col[r] = s(r, i);
    std::sort(col.begin(), col.end());
    double stat = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double cdf = 0.5 * std::erfc(-col[r] / std::sqrt(2.0));
      stat = std::max({stat, std::abs(cdf - static_cast<double>(r) / n),
                       std::abs(static_cast<double>(r + 1) / n - cdf)});
    }
    CHECK(stat < 1.628 / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("sampling inverts the transform stack") {
  Rng init(10);
  RedModel m = init_model(small_config(4), init);
  randomize_parameters(m, init, 0.3);
  for (int trial = 0; trial < 50; ++trial) {
    Rng a(static_cast<std::uint64_t>(trial)), b(static_cast<std::uint64_t>(trial));
    const Vector z = conditional_sample(m.cond, a);
    const Vector x = sample_row(m, b);
    const Vector back = latent_of(m, x);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(back[i] - z[i]) < 1e-8);
  }
}

TEST_CASE("sampling is deterministic and row-seeded") {
  Rng init(11);
  RedModel m = init_model(small_config(3), init);
  randomize_parameters(m, init, 0.2);
  Rng a(5), b(5);
  CHECK(sample(m, a, 1) == sample(m, b, 1));

  Rng c(6);
  const Matrix s = sample(m, c, 64);
  Rng d(6);
  const std::uint64_t base = d.next_u64();
  for (std::size_t r = 0; r < 64; ++r) {
    Rng row(derive_seed(base, r));
    const Vector x = sample_row(m, row);
    CHECK(std::equal(x.begin(), x.end(), s.row(r).begin()));
  }
  CHECK_THROWS_AS(sample(m, c, 0), ContractError);
}

TEST_CASE("log-likelihood of self-samples is finite and stable") {
  Rng init(12);
  RedModel m = init_model(small_config(2), init);
  randomize_parameters(m, init, 0.2);
  Rng rng(13);
  const Matrix s = sample(m, rng, 10000);
  const Vector lp = log_prob_rows(m, s);
  double mean = 0.0;
  for (double v : lp) {
    CHECK(std::isfinite(v));
    mean += v;
  }
  mean /= static_cast<double>(lp.size());
  Rng rng2(14);
  const double mean2 = -nll(m, sample(m, rng2, 10000));
  CHECK(std::abs(mean - mean2) < 0.1);
}
