#include "red/kernels.hpp"

#include <algorithm>
#include <string>

#include "parallel.hpp"
#include "red/errors.hpp"

namespace red {

namespace {

void check_columns(const RedModel& m, const Matrix& x) {
  if (x.cols() != m.dim()) {
    throw ShapeError("model has dimension " + std::to_string(m.dim()) + ", data has " +
                     std::to_string(x.cols()) + " columns");
  }
}

void check_batch(const RedModel& m, const Matrix& batch) {
  if (batch.empty()) {
    throw ContractError("loss_and_gradients: empty batch");
  }
  check_columns(m, batch);
}

// Sum of log_prob and its gradient over rows [begin, end), serially.
double accumulate_rows(const RedModel& m, const Matrix& batch, std::size_t begin,
                       std::size_t end, double weight, RedModel& grads) {
  RowCache cache;
  double total = 0.0;
  for (std::size_t r = begin; r < end; ++r) {
    total += log_prob(m, batch.row(r), &cache);
    log_prob_vjp(m, cache, weight, grads);
  }
  return total;
}

}  // namespace

void accumulate(RedModel& dst, const RedModel& src) {
  auto d = dst.parameters();
  const auto s = src.parameters();
  if (d.size() != s.size()) {
    throw ShapeError("accumulate: parameter layouts differ");
  }
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (d[k].values.size() != s[k].values.size()) {
      throw ShapeError("accumulate: size mismatch for " + d[k].name);
    }
    for (std::size_t i = 0; i < d[k].values.size(); ++i) {
      d[k].values[i] += s[k].values[i];
    }
  }
}

Vector log_prob_rows(const RedModel& m, const Matrix& x) {
  check_columns(m, x);
  const std::size_t n = x.rows();
  Vector out(n);
  detail::FirstError error;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < n; ++r) {
    try {
      out[r] = log_prob(m, x.row(r));
    } catch (...) {
      error.capture(r);
    }
  }
  error.rethrow();
  return out;
}

Vector log_prob_rows_serial(const RedModel& m, const Matrix& x) {
  check_columns(m, x);
  Vector out(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    out[r] = log_prob(m, x.row(r));
  }
  return out;
}

LossAndGrad batch_loss_and_gradients(const RedModel& m, const Matrix& batch) {
  check_batch(m, batch);
  const std::size_t n = batch.rows();
  const std::size_t chunks = std::min(kGradientChunks, n);
  const double weight = -1.0 / static_cast<double>(n);

  std::vector<RedModel> partial(chunks, m.zeros_like());
  Vector totals(chunks, 0.0);
  detail::FirstError error;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t begin = c * n / chunks;
    const std::size_t end = (c + 1) * n / chunks;
    try {
      totals[c] = accumulate_rows(m, batch, begin, end, weight, partial[c]);
    } catch (...) {
      error.capture(c);
    }
  }
  error.rethrow();

  LossAndGrad out{0.0, std::move(partial.front())};
  double total = totals.front();
  for (std::size_t c = 1; c < chunks; ++c) {
    accumulate(out.grads, partial[c]);
    total += totals[c];
  }
  out.loss = -total / static_cast<double>(n);
  return out;
}

LossAndGrad batch_loss_and_gradients_serial(const RedModel& m, const Matrix& batch) {
  check_batch(m, batch);
  const std::size_t n = batch.rows();
  LossAndGrad out{0.0, m.zeros_like()};
  const double total = accumulate_rows(m, batch, 0, n, -1.0 / static_cast<double>(n), out.grads);
  out.loss = -total / static_cast<double>(n);
  return out;
}

}  // namespace red
