#pragma once

#include <cstddef>
#include <exception>
#include <limits>
#include <mutex>

namespace red::detail {

// Collects exceptions thrown inside an OpenMP loop body. The one from the
// lowest iteration wins, so the rethrown error does not depend on scheduling.
class FirstError {
 public:
  void capture(std::size_t iteration) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (iteration < iteration_) {
      iteration_ = iteration;
      error_ = std::current_exception();
    }
  }

  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::mutex mutex_;
  std::size_t iteration_ = std::numeric_limits<std::size_t>::max();
  std::exception_ptr error_;
};

}  // namespace red::detail
