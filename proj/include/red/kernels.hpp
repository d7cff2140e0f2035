#pragma once

#include <cstddef>

#include "red/model.hpp"
#include "red/numerics.hpp"

namespace red {

// Batched kernels. Each has an OpenMP version and a plain serial reference
// that tests and the benchmark compare against.
//
// The parallel gradient splits the batch into a fixed number of contiguous
// chunks (independent of thread count), reduces each chunk serially and then
// sums chunk results in order, so the result is bit-identical for any
// OMP_NUM_THREADS.

inline constexpr std::size_t kGradientChunks = 16;

Vector log_prob_rows(const RedModel& m, const Matrix& x);
Vector log_prob_rows_serial(const RedModel& m, const Matrix& x);

struct LossAndGrad {
  double loss = 0.0;  // mean NLL over the batch
  RedModel grads;     // d loss / d params
};

LossAndGrad batch_loss_and_gradients(const RedModel& m, const Matrix& batch);
LossAndGrad batch_loss_and_gradients_serial(const RedModel& m, const Matrix& batch);

// Adds src into dst element-wise; layouts must match.
void accumulate(RedModel& dst, const RedModel& src);

}  // namespace red
