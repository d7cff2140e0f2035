#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "red/conditional_gmm.hpp"
#include "red/numerics.hpp"
#include "red/params.hpp"
#include "red/transforms.hpp"

namespace red {

struct ModelConfig {
  std::size_t dim = 1;
  std::size_t num_units = 32;        // conditional GRU and head width
  std::size_t transform_hidden = 4;  // recurrent transform state size
  std::size_t num_components = 5;
  std::size_t num_fcs = 1;           // tanh layers before the linear GMM output
  double alpha = 0.1;
  // Initial offset of the forward recurrent transform, mirrored in the
  // mixture means, so standardized data starts on the unit-slope branch.
  double init_shift = 6.0;
  CandidateActivation candidate = CandidateActivation::Sigmoid;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Full density: x -> z = stack(x), log p(x) = logdet + sum_i log p(z_i | h_{i-1}).
struct RedModel {
  ModelConfig config;
  TransformStack stack;
  ConditionalModel cond;

  std::size_t dim() const { return config.dim; }

  std::vector<ParamRef> parameters();
  std::vector<ConstParamRef> parameters() const;
  std::size_t parameter_count() const;

  // Same layout, all values zero. Used as the gradient container.
  RedModel zeros_like() const;
  void project_constraints();
};

/// Identity-like transform stack (w, V ~ N(0, 0.01^2)) with the forward
/// offset set to init_shift, GRU and head weights ~ N(0, 0.01^2), mixture
/// mean biases set to init_shift, all other biases zero, zero h0.
RedModel init_model(const ModelConfig& cfg, Rng& rng);
RedModel init_model(const ModelConfig& cfg);  // Rng seeded from cfg.seed

// Adds N(0, scale^2) noise to every parameter, then re-applies the
// singularity floors. Gives generic (non-identity) models for checks.
void randomize_parameters(RedModel& m, Rng& rng, double scale);

struct RowCache {
  StackCache stack;
  CondCache cond;
  double logdet = 0.0;
};

double log_prob(const RedModel& m, std::span<const double> x, RowCache* cache = nullptr);
// Adds d(weight * log_prob)/d(params) into grads. Needs a cache from log_prob.
void log_prob_vjp(const RedModel& m, const RowCache& cache, double weight, RedModel& grads);

// Mean of -log_prob over rows.
double nll(const RedModel& m, const Matrix& x);

Vector sample_row(const RedModel& m, Rng& rng);
// Row r is drawn from its own generator seeded by derive_seed(base, r), base
// taken from rng; rows can be produced in parallel with identical output.
Matrix sample(const RedModel& m, Rng& rng, std::size_t n);

}  // namespace red
