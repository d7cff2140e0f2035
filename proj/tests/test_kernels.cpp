#include <doctest.h>

#include <cmath>
#include <cstring>

#include <omp.h>

#include "helpers.hpp"
#include "red/errors.hpp"
#include "red/kernels.hpp"

using namespace red;

namespace {

RedModel random_model(std::size_t d, std::uint64_t seed) {
  ModelConfig c;
  c.dim = d;
  c.num_units = 8;
  c.transform_hidden = 3;
  c.num_components = 3;
  Rng rng(seed);
  RedModel m = init_model(c, rng);
  randomize_parameters(m, rng, 0.2);
  return m;
}

Matrix random_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return Matrix(n, d, testing::random_vector(n * d, rng));
}

bool bit_equal(const RedModel& a, const RedModel& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (std::memcmp(pa[i].values.data(), pb[i].values.data(), pa[i].values.size() * 8) != 0) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("parallel log_prob_rows equals the serial reference exactly") {
  const RedModel m = random_model(6, 1);
  const Matrix x = random_batch(333, 6, 2);
  const Vector par = log_prob_rows(m, x);
  const Vector ser = log_prob_rows_serial(m, x);
  CHECK(std::memcmp(par.data(), ser.data(), par.size() * sizeof(double)) == 0);
  CHECK_THROWS_AS(log_prob_rows(m, random_batch(3, 5, 3)), ShapeError);
}

TEST_CASE("parallel gradient agrees with the serial reference") {
  const RedModel m = random_model(4, 4);
  const Matrix x = random_batch(101, 4, 5);
  const LossAndGrad par = batch_loss_and_gradients(m, x);
  const LossAndGrad ser = batch_loss_and_gradients_serial(m, x);
  CHECK(par.loss == doctest::Approx(ser.loss).epsilon(1e-13));
  const auto gp = par.grads.parameters();
  const auto gs = ser.grads.parameters();
  for (std::size_t i = 0; i < gp.size(); ++i) {
    for (std::size_t k = 0; k < gp[i].values.size(); ++k) {
      CHECK(std::abs(gp[i].values[k] - gs[i].values[k]) <=
            1e-12 * (1.0 + std::abs(gs[i].values[k])));
    }
  }
}

TEST_CASE("parallel gradient is bit-identical for any thread count") {
  const RedModel m = random_model(5, 6);
  const Matrix x = random_batch(77, 5, 7);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const LossAndGrad one = batch_loss_and_gradients(m, x);
  omp_set_num_threads(4);
  const LossAndGrad four = batch_loss_and_gradients(m, x);
  omp_set_num_threads(saved);
  CHECK(one.loss == four.loss);
  CHECK(bit_equal(one.grads, four.grads));
}

TEST_CASE("batch of identical rows has the single-row gradient") {
  const RedModel m = random_model(3, 8);
  const Matrix one = random_batch(1, 3, 9);
  Matrix many(40, 3);
  for (std::size_t r = 0; r < 40; ++r) std::copy(one.row(0).begin(), one.row(0).end(), many.row(r).begin());
  const LossAndGrad a = batch_loss_and_gradients(m, one);
  const LossAndGrad b = batch_loss_and_gradients(m, many);
  CHECK(b.loss == doctest::Approx(a.loss).epsilon(1e-13));
  const auto ga = a.grads.parameters();
  const auto gb = b.grads.parameters();
  for (std::size_t i = 0; i < ga.size(); ++i) {
    for (std::size_t k = 0; k < ga[i].values.size(); ++k) {
      CHECK(std::abs(ga[i].values[k] - gb[i].values[k]) <= 1e-12 * (1.0 + std::abs(ga[i].values[k])));
    }
  }
}

TEST_CASE("gradient kernels reject empty batches") {
  const RedModel m = random_model(3, 10);
  CHECK_THROWS_AS(batch_loss_and_gradients(m, Matrix(0, 3)), ContractError);
  CHECK_THROWS_AS(batch_loss_and_gradients_serial(m, Matrix(0, 3)), ContractError);
}

TEST_CASE("accumulate adds element-wise and checks layout") {
  RedModel a = random_model(3, 11);
  const RedModel b = random_model(3, 12);
  const RedModel a0 = a;
  accumulate(a, b);
  const auto pa = a.parameters();
  const auto p0 = a0.parameters();
  const auto pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].values.size(); ++k) {
      CHECK(pa[i].values[k] == p0[i].values[k] + pb[i].values[k]);
    }
  }
  RedModel other = random_model(4, 13);
  CHECK_THROWS_AS(accumulate(other, b), ShapeError);
}
