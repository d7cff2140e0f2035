#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "red/kernels.hpp"
#include "red/model.hpp"

namespace red {

struct TrainConfig {
  double init_lr = 3e-3;
  double decay_factor = 1.0;
  double min_lr = 0.0;
  std::size_t batch_size = 128;
  std::size_t max_epochs = 200;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  double noise_std = 0.01;
  bool noise_per_epoch = false;
  double grad_clip_norm = 5.0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Mean NLL and exact gradients for a batch. Throws NumericError naming the
// first non-finite intermediate when the loss is not finite.
LossAndGrad loss_and_gradients(const RedModel& m, const Matrix& batch);

/// Bias-corrected Adam with per-parameter moments mirroring the model layout.
class AdamState {
 public:
  explicit AdamState(const RedModel& layout, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8);

  // One update, then projection of |U_ii| and |y| onto the singularity floor.
  void step(RedModel& params, const RedModel& grads, double lr);
  std::uint64_t steps() const { return step_; }

 private:
  double beta1_, beta2_, eps_;
  std::uint64_t step_ = 0;
  std::vector<Vector> first_;
  std::vector<Vector> second_;
};

// max(min_lr, init_lr * decay_factor^epoch)
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

double global_norm(const RedModel& grads);
// Rescales grads so the global norm is at most max_norm. Returns the norm before clipping.
double clip_gradients(RedModel& grads, double max_norm);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 = evaluation at initialization
  double train_nll = 0.0;
  double val_nll = 0.0;
  double lr = 0.0;        // rate used during this epoch (0 for the init record)
  double seconds = 0.0;   // wall time since training started
};

using TrainHistory = std::vector<EpochRecord>;

// CSV with header epoch,train_nll,val_nll,lr[,seconds]. Wall time is the only
// non-deterministic column, so it is optional.
void write_history_csv(const TrainHistory& h, const std::filesystem::path& path,
                       bool include_seconds);

struct TrainResult {
  RedModel model;  // best-validation snapshot
  TrainHistory history;
  std::size_t best_epoch = 0;
  double best_val_nll = 0.0;
};

/// Shuffled minibatch Adam with per-epoch decay, global-norm clipping and
/// early stopping on validation NLL. If an epoch produces a non-finite loss,
/// it is retried once from its starting state with half the learning rate;
/// a second failure aborts with NumericError.
TrainResult train(RedModel model, const Matrix& train_x, const Matrix& val_x,
                  const TrainConfig& cfg);

struct GridSpace {
  std::vector<std::size_t> num_units{32, 64, 128};
  std::vector<double> init_lr{1e-2, 3e-3, 1e-3};
  std::vector<double> decay_factor{1.0, 0.97};
  std::vector<std::size_t> num_fcs{1, 2};
  std::vector<std::size_t> num_components{5, 10, 20};

  std::size_t size() const;
};

void to_json(nlohmann::json& j, const GridSpace& g);
void from_json(const nlohmann::json& j, GridSpace& g);

struct GridEntry {
  std::size_t index = 0;  // position in the Cartesian enumeration
  ModelConfig model;
  TrainConfig train;
  bool ok = false;
  double val_nll = 0.0;
  std::size_t parameter_count = 0;
  std::string error;
};

struct GridResult {
  std::vector<GridEntry> leaderboard;  // successful runs ascending by val NLL, failures last
  GridEntry best;
  TrainResult best_result;
};

/// Trains every combination in parallel and picks the lowest validation NLL;
/// ties go to fewer parameters, then to the earlier combination. Every run
/// uses the base model and training seeds, so combinations differ only in
/// their hyperparameters and a one-point grid reproduces train() exactly.
/// Failed runs are kept on the leaderboard; NumericError only if all fail.
GridResult grid_search(const GridSpace& space, const ModelConfig& base_model,
                       const TrainConfig& base_train, const Matrix& train_x, const Matrix& val_x);

void write_leaderboard_csv(const std::vector<GridEntry>& board, const std::filesystem::path& path);

struct GradCheckViolation {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::vector<GradCheckViolation> violations;
  bool passed() const { return violations.empty(); }
};

using GradientFn = std::function<LossAndGrad(const RedModel&, const Matrix&)>;

/// Compares analytic gradients with central differences of the mean NLL.
/// rel = |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|); entries above tol are
/// reported.
GradCheckReport gradient_check(const RedModel& m, const Matrix& batch, double eps, double tol,
                               const GradientFn& gradient = loss_and_gradients);

}  // namespace red
