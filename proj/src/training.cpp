#include "red/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "red/data.hpp"
#include "red/errors.hpp"

namespace red {

namespace {

// Stream ids for derive_seed(cfg.seed, ...).
constexpr std::uint64_t kShuffleStream = 10;
constexpr std::uint64_t kNoiseStreamBase = 1000;

std::string first_non_finite(const RedModel& m, const Matrix& batch) {
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto x = batch.row(r);
    for (double v : x) {
      if (!std::isfinite(v)) return "input row " + std::to_string(r);
    }
    const StageOutput lin = linear_forward(m.stack.linear, x);
    for (double v : lin.z) {
      if (!std::isfinite(v)) return "linear transform output, row " + std::to_string(r);
    }
    const StageOutput fwd = recurrent_forward(m.stack.forward, lin.z, false);
    for (double v : fwd.z) {
      if (!std::isfinite(v)) return "forward recurrent output, row " + std::to_string(r);
    }
    const StageOutput bwd = recurrent_forward(m.stack.backward, fwd.z, true);
    for (double v : bwd.z) {
      if (!std::isfinite(v)) return "backward recurrent output, row " + std::to_string(r);
    }
    if (!std::isfinite(lin.logdet + fwd.logdet + bwd.logdet)) {
      return "transform log-determinant, row " + std::to_string(r);
    }
    const CondResult c = conditional_log_likelihood(m.cond, bwd.z);
    for (std::size_t i = 0; i < c.per_dim.size(); ++i) {
      if (!std::isfinite(c.per_dim[i])) {
        return "conditional log-density of dimension " + std::to_string(i + 1) + ", row " +
               std::to_string(r);
      }
    }
  }
  return "gradient accumulation";
}

bool all_finite(const RedModel& grads) {
  for (const auto& p : grads.parameters()) {
    for (double v : p.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::vector<std::size_t> identity_permutation(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(init_lr > 0.0)) throw DomainError("train config: init_lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw DomainError("train config: decay_factor must lie in (0, 1]");
  }
  if (!(min_lr >= 0.0 && min_lr <= init_lr)) {
    throw DomainError("train config: min_lr must lie in [0, init_lr]");
  }
  if (batch_size == 0) throw DomainError("train config: batch_size must be at least 1");
  if (!(noise_std >= 0.0)) throw DomainError("train config: noise_std must be non-negative");
  if (!(grad_clip_norm > 0.0)) throw DomainError("train config: grad_clip_norm must be positive");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"init_lr", c.init_lr},       {"decay_factor", c.decay_factor},
                     {"min_lr", c.min_lr},         {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs}, {"patience", c.patience},
                     {"seed", c.seed},             {"noise_std", c.noise_std},
                     {"noise_per_epoch", c.noise_per_epoch},
                     {"grad_clip_norm", c.grad_clip_norm}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig def;
  c.init_lr = j.value("init_lr", def.init_lr);
  c.decay_factor = j.value("decay_factor", def.decay_factor);
  if (j.contains("min_lr_factor")) {
    c.min_lr = c.init_lr * j["min_lr_factor"].get<double>();
  } else {
    c.min_lr = j.value("min_lr", def.min_lr);
  }
  c.batch_size = j.value("batch_size", def.batch_size);
  c.max_epochs = j.value("max_epochs", def.max_epochs);
  c.patience = j.value("patience", def.patience);
  c.seed = j.value("seed", def.seed);
  c.noise_std = j.value("noise_std", def.noise_std);
  c.noise_per_epoch = j.value("noise_per_epoch", def.noise_per_epoch);
  c.grad_clip_norm = j.value("grad_clip_norm", def.grad_clip_norm);
}

LossAndGrad loss_and_gradients(const RedModel& m, const Matrix& batch) {
  LossAndGrad out = batch_loss_and_gradients(m, batch);
  if (!std::isfinite(out.loss)) {
    throw NumericError("non-finite loss; first non-finite value in " + first_non_finite(m, batch));
  }
  return out;
}

AdamState::AdamState(const RedModel& layout, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : layout.parameters()) {
    first_.emplace_back(p.values.size(), 0.0);
    second_.emplace_back(p.values.size(), 0.0);
  }
}

void AdamState::step(RedModel& params, const RedModel& grads, double lr) {
  auto ps = params.parameters();
  const auto gs = grads.parameters();
  if (ps.size() != first_.size() || gs.size() != first_.size()) {
    throw ShapeError("adam: parameter layout does not match optimizer state");
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps[k].values;
    const auto& g = gs[k].values;
    if (p.size() != first_[k].size() || g.size() != first_[k].size()) {
      throw ShapeError("adam: shape mismatch for " + ps[k].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      first_[k][i] = beta1_ * first_[k][i] + (1.0 - beta1_) * g[i];
      second_[k][i] = beta2_ * second_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      const double m_hat = first_[k][i] / c1;
      const double v_hat = second_[k][i] / c2;
      p[i] -= lr * m_hat / (std::sqrt(v_hat) + eps_);
    }
  }
  params.project_constraints();
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  return std::max(cfg.min_lr, cfg.init_lr * std::pow(cfg.decay_factor, static_cast<double>(epoch)));
}

double global_norm(const RedModel& grads) {
  double acc = 0.0;
  for (const auto& p : grads.parameters()) {
    for (double v : p.values) acc += v * v;
  }
  return std::sqrt(acc);
}

double clip_gradients(RedModel& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& p : grads.parameters()) {
      for (double& v : p.values) v *= scale;
    }
  }
  return norm;
}

void write_history_csv(const TrainHistory& h, const std::filesystem::path& path,
                       bool include_seconds) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "epoch,train_nll,val_nll,lr" << (include_seconds ? ",seconds" : "") << "\n";
  for (const auto& e : h) {
    out << e.epoch << "," << e.train_nll << "," << e.val_nll << "," << e.lr;
    if (include_seconds) out << "," << e.seconds;
    out << "\n";
  }
}

TrainResult train(RedModel model, const Matrix& train_x, const Matrix& val_x,
                  const TrainConfig& cfg) {
  cfg.validate();
  if (train_x.empty() || val_x.empty()) {
    throw ContractError("train: train and validation sets must be non-empty");
  }
  if (train_x.cols() != model.dim() || val_x.cols() != model.dim()) {
    throw ShapeError("train: data columns do not match model dimension");
  }
  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  };

  TrainResult result;
  const double init_val = nll(model, val_x);
  result.history.push_back({0, nll(model, train_x), init_val, 0.0, elapsed()});
  result.model = model;
  result.best_val_nll = init_val;

  AdamState adam(model);
  Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> order = identity_permutation(train_x.rows());
  double lr_scale = 1.0;
  std::size_t since_best = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Matrix noisy;
    if (cfg.noise_per_epoch && cfg.noise_std > 0.0) {
      Rng noise_rng(derive_seed(cfg.seed, kNoiseStreamBase + epoch));
      noisy = add_noise(train_x, cfg.noise_std, noise_rng);
    }
    const Matrix& data = noisy.empty() ? train_x : noisy;

    const RedModel start_model = model;
    const AdamState start_adam = adam;
    const Rng start_rng = shuffle_rng;
    const std::vector<std::size_t> start_order = order;
    double lr = 0.0;
    double train_nll = 0.0;
    double val_nll = 0.0;
    for (int attempt = 0;; ++attempt) {
      lr = lr_schedule(cfg, epoch - 1) * lr_scale;
      bool finite = true;
      std::string failure;
      try {
        for (std::size_t i = order.size(); i > 1; --i) {
          std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);
        }
        for (std::size_t begin = 0; begin < order.size() && finite; begin += cfg.batch_size) {
          const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
          const Matrix batch = data.select_rows(
              std::span<const std::size_t>(order).subspan(begin, end - begin));
          LossAndGrad lg = loss_and_gradients(model, batch);
          if (!all_finite(lg.grads)) {
            finite = false;
            failure = "non-finite gradient";
            break;
          }
          clip_gradients(lg.grads, cfg.grad_clip_norm);
          adam.step(model, lg.grads, lr);
        }
        if (finite) {
          train_nll = nll(model, train_x);
          val_nll = nll(model, val_x);
          if (!std::isfinite(train_nll) || !std::isfinite(val_nll)) {
            finite = false;
            failure = "non-finite epoch NLL";
          }
        }
      } catch (const NumericError& e) {
        finite = false;
        failure = e.what();
      } catch (const SingularityError& e) {
        finite = false;
        failure = e.what();
      }
      if (finite) break;
      if (attempt >= 1) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " even after halving the learning rate: " + failure);
      }
      model = start_model;
      adam = start_adam;
      shuffle_rng = start_rng;
      order = start_order;
      lr_scale *= 0.5;
    }

    result.history.push_back({epoch, train_nll, val_nll, lr, elapsed()});
    if (val_nll < result.best_val_nll) {
      result.best_val_nll = val_nll;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

std::size_t GridSpace::size() const {
  return num_units.size() * init_lr.size() * decay_factor.size() * num_fcs.size() *
         num_components.size();
}

void to_json(nlohmann::json& j, const GridSpace& g) {
  j = nlohmann::json{{"num_units", g.num_units},
                     {"init_lr", g.init_lr},
                     {"decay_factor", g.decay_factor},
                     {"num_fcs", g.num_fcs},
                     {"num_components", g.num_components}};
}

void from_json(const nlohmann::json& j, GridSpace& g) {
  GridSpace def;
  g.num_units = j.value("num_units", def.num_units);
  g.init_lr = j.value("init_lr", def.init_lr);
  g.decay_factor = j.value("decay_factor", def.decay_factor);
  g.num_fcs = j.value("num_fcs", def.num_fcs);
  g.num_components = j.value("num_components", def.num_components);
}

GridResult grid_search(const GridSpace& space, const ModelConfig& base_model,
                       const TrainConfig& base_train, const Matrix& train_x, const Matrix& val_x) {
  const std::size_t total = space.size();
  if (total == 0) {
    throw ContractError("grid_search: empty search space");
  }
  std::vector<GridEntry> entries(total);
  std::vector<std::optional<TrainResult>> results(total);

  // Enumeration order: num_units, init_lr, decay_factor, num_fcs, num_components
  // (last varies fastest).
  std::size_t idx = 0;
  for (std::size_t units : space.num_units)
    for (double lr : space.init_lr)
      for (double decay : space.decay_factor)
        for (std::size_t fcs : space.num_fcs)
          for (std::size_t comps : space.num_components) {
            GridEntry& e = entries[idx];
            e.index = idx++;
            e.model = base_model;
            e.model.num_units = units;
            e.model.num_fcs = fcs;
            e.model.num_components = comps;
            e.train = base_train;
            e.train.init_lr = lr;
            e.train.decay_factor = decay;
            e.train.min_lr = std::min(base_train.min_lr, lr);
          }

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t k = 0; k < total; ++k) {
    GridEntry& e = entries[k];
    try {
      RedModel m = init_model(e.model);
      e.parameter_count = m.parameter_count();
      TrainResult r = train(std::move(m), train_x, val_x, e.train);
      if (std::isfinite(r.best_val_nll)) {
        e.ok = true;
        e.val_nll = r.best_val_nll;
        results[k] = std::move(r);
      } else {
        e.error = "non-finite validation NLL";
      }
    } catch (const std::exception& ex) {
      e.error = ex.what();
    }
  }

  std::vector<GridEntry> board = entries;
  std::stable_sort(board.begin(), board.end(), [](const GridEntry& a, const GridEntry& b) {
    if (a.ok != b.ok) return a.ok;
    if (!a.ok) return a.index < b.index;
    if (a.val_nll != b.val_nll) return a.val_nll < b.val_nll;
    if (a.parameter_count != b.parameter_count) return a.parameter_count < b.parameter_count;
    return a.index < b.index;
  });
  if (!board.front().ok) {
    throw NumericError("grid_search: every run failed; first error: " + board.front().error);
  }
  GridResult out;
  out.best = board.front();
  out.best_result = std::move(*results[out.best.index]);
  out.leaderboard = std::move(board);
  return out;
}

void write_leaderboard_csv(const std::vector<GridEntry>& board, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.precision(17);
  out << "rank,index,num_units,init_lr,decay_factor,num_fcs,num_components,parameters,val_nll,"
         "status\n";
  for (std::size_t r = 0; r < board.size(); ++r) {
    const GridEntry& e = board[r];
    out << r + 1 << "," << e.index << "," << e.model.num_units << "," << e.train.init_lr << ","
        << e.train.decay_factor << "," << e.model.num_fcs << "," << e.model.num_components << ","
        << e.parameter_count << ",";
    if (e.ok) {
      out << e.val_nll << ",ok\n";
    } else {
      std::string msg = e.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ",failed: " << msg << "\n";
    }
  }
}

GradCheckReport gradient_check(const RedModel& m, const Matrix& batch, double eps, double tol,
                               const GradientFn& gradient) {
  const LossAndGrad analytic = gradient(m, batch);
  RedModel probe = m;
  auto params = probe.parameters();
  const auto grads = analytic.grads.parameters();

  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].values.size(); ++i) {
      double& v = params[k].values[i];
      const double saved = v;
      v = saved + eps;
      const double up = nll(probe, batch);
      v = saved - eps;
      const double down = nll(probe, batch);
      v = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = grads[k].values[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      ++report.checked;
      report.max_rel_error = std::max(report.max_rel_error, rel);
      if (!(rel <= tol)) {
        report.violations.push_back({params[k].name, i, a, numeric, rel});
      }
    }
  }
  return report;
}

}  // namespace red
