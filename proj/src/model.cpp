#include "red/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "parallel.hpp"
#include "red/errors.hpp"
#include "red/kernels.hpp"

namespace red {

namespace {

constexpr double kInitScale = 0.01;

void fill_normal(Vector& v, Rng& rng, double scale) {
  for (double& x : v) {
    x = scale * rng.normal();
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (dim == 0 || num_units == 0 || transform_hidden == 0 || num_components == 0 ||
      num_fcs == 0) {
    throw DomainError("model config: all counts must be positive");
  }
  if (!(alpha > 0.0)) {
    throw DomainError("model config: alpha must be positive");
  }
  if (!std::isfinite(init_shift)) {
    throw DomainError("model config: init_shift must be finite");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.dim},
                     {"num_units", c.num_units},
                     {"transform_hidden", c.transform_hidden},
                     {"num_components", c.num_components},
                     {"num_fcs", c.num_fcs},
                     {"alpha", c.alpha},
                     {"init_shift", c.init_shift},
                     {"candidate_activation", to_string(c.candidate)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig def;
  c.dim = j.value("d", def.dim);
  c.num_units = j.value("num_units", def.num_units);
  c.transform_hidden = j.value("transform_hidden", def.transform_hidden);
  c.num_components = j.value("num_components", def.num_components);
  c.num_fcs = j.value("num_fcs", def.num_fcs);
  c.alpha = j.value("alpha", def.alpha);
  c.init_shift = j.value("init_shift", def.init_shift);
  c.candidate = candidate_activation_from_string(
      j.value("candidate_activation", to_string(def.candidate)));
  c.seed = j.value("seed", def.seed);
}

std::vector<ParamRef> RedModel::parameters() {
  std::vector<ParamRef> out;
  stack.collect(out);
  cond.collect(out);
  return out;
}

std::vector<ConstParamRef> RedModel::parameters() const {
  std::vector<ConstParamRef> out;
  stack.collect(out);
  cond.collect(out);
  return out;
}

std::size_t RedModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) {
    n += p.values.size();
  }
  return n;
}

RedModel RedModel::zeros_like() const {
  RedModel z = *this;
  for (auto& p : z.parameters()) {
    std::fill(p.values.begin(), p.values.end(), 0.0);
  }
  return z;
}

void RedModel::project_constraints() { red::project_constraints(stack); }

RedModel init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  RedModel m;
  m.config = cfg;
  m.stack = TransformStack::identity(cfg.dim, cfg.transform_hidden, cfg.alpha);
  m.stack.forward.shift = cfg.init_shift;
  for (RecurrentTransform* t : {&m.stack.forward, &m.stack.backward}) {
    fill_normal(t->out_weights, rng, kInitScale);
    fill_normal(t->rec_weights, rng, kInitScale);
  }
  m.cond.dim = cfg.dim;
  m.cond.gru = Gru::zeros(cfg.num_units, cfg.candidate);
  for (Vector* v : {&m.cond.gru.in_update, &m.cond.gru.rec_update, &m.cond.gru.in_reset,
                    &m.cond.gru.rec_reset, &m.cond.gru.in_cand, &m.cond.gru.rec_cand}) {
    fill_normal(*v, rng, kInitScale);
  }
  m.cond.head = MixtureHead::zeros(cfg.num_units, cfg.num_fcs, cfg.num_components);
  for (DenseLayer& layer : m.cond.head.layers) {
    fill_normal(layer.weights, rng, kInitScale);
  }
  DenseLayer& output = m.cond.head.layers.back();
  std::fill(output.bias.begin(), output.bias.begin() + static_cast<std::ptrdiff_t>(cfg.num_components),
            cfg.init_shift);
  return m;
}

RedModel init_model(const ModelConfig& cfg) {
  Rng rng(cfg.seed);
  return init_model(cfg, rng);
}

void randomize_parameters(RedModel& m, Rng& rng, double scale) {
  for (auto& p : m.parameters()) {
    for (double& v : p.values) v += scale * rng.normal();
  }
  m.project_constraints();
}

double log_prob(const RedModel& m, std::span<const double> x, RowCache* cache) {
  if (x.size() != m.dim()) {
    throw ShapeError("log_prob: model has dimension " + std::to_string(m.dim()) +
                     ", input has " + std::to_string(x.size()));
  }
  const StageOutput t = stack_forward(m.stack, x, cache ? &cache->stack : nullptr);
  const CondResult c = conditional_log_likelihood(m.cond, t.z, cache ? &cache->cond : nullptr);
  if (cache != nullptr) {
    cache->logdet = t.logdet;
  }
  return t.logdet + c.total;
}

void log_prob_vjp(const RedModel& m, const RowCache& cache, double weight, RedModel& grads) {
  const Vector grad_z = conditional_vjp(m.cond, cache.cond, weight, grads.cond);
  stack_vjp(m.stack, cache.stack, grad_z, weight, grads.stack);
}

double nll(const RedModel& m, const Matrix& x) {
  if (x.empty()) {
    throw ContractError("nll: empty data");
  }
  const Vector lp = log_prob_rows(m, x);
  double acc = 0.0;
  for (double v : lp) {
    acc -= v;
  }
  return acc / static_cast<double>(lp.size());
}

Vector sample_row(const RedModel& m, Rng& rng) {
  return stack_inverse(m.stack, conditional_sample(m.cond, rng));
}

Matrix sample(const RedModel& m, Rng& rng, std::size_t n) {
  if (n == 0) {
    throw ContractError("sample: n must be at least 1");
  }
  const std::uint64_t base = rng.next_u64();
  const std::size_t d = m.dim();
  Matrix out(n, d);
  detail::FirstError error;
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < n; ++r) {
    try {
      Rng row_rng(derive_seed(base, r));
      const Vector x = sample_row(m, row_rng);
      std::copy(x.begin(), x.end(), out.row(r).begin());
    } catch (...) {
      error.capture(r);
    }
  }
  error.rethrow();
  return out;
}

}  // namespace red
