#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "red/numerics.hpp"
#include "red/params.hpp"

namespace red {

// Log-std clamp, i.e. component stds live in [1e-3, 1e3].
inline constexpr double kMinLogStd = -6.907755278982137;  // log(1e-3)
inline constexpr double kMaxLogStd = 6.907755278982137;   // log(1e3)

enum class CandidateActivation { Sigmoid, Tanh };

std::string to_string(CandidateActivation a);
CandidateActivation candidate_activation_from_string(const std::string& s);

/// GRU over a scalar input stream. Each gate g in {update, reset, cand}
/// has an input weight vector (hidden), a recurrent matrix (hidden x
/// hidden, row-major) and a bias (hidden):
///   u = sigmoid(Wu x + Ru h + bu)
///   r = sigmoid(Wr x + Rr h + br)
///   c = act(Wc x + Rc (r * h) + bc)
///   h' = u * h + (1 - u) * c
/// h0 is learned.
struct Gru {
  std::size_t hidden = 0;
  CandidateActivation candidate = CandidateActivation::Sigmoid;
  Vector in_update, rec_update, bias_update;
  Vector in_reset, rec_reset, bias_reset;
  Vector in_cand, rec_cand, bias_cand;
  Vector h0;

  static Gru zeros(std::size_t hidden, CandidateActivation candidate);

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Vector weights;  // out x in, row-major
  Vector bias;
};

/// Stack of `num_hidden` tanh layers (width = gru hidden) followed by a
/// linear layer producing 3K values: K means, K log-stds, K logits.
struct MixtureHead {
  std::size_t components = 0;
  std::vector<DenseLayer> layers;

  static MixtureHead zeros(std::size_t in, std::size_t num_hidden, std::size_t components);

  void collect(const std::string& prefix, std::vector<ParamRef>& out);
  void collect(const std::string& prefix, std::vector<ConstParamRef>& out) const;
};

struct MixtureParams {
  Vector means;
  Vector log_stds;  // already clamped
  Vector logits;
  std::size_t size() const { return means.size(); }
};

struct ConditionalModel {
  std::size_t dim = 0;
  Gru gru;
  MixtureHead head;
  std::size_t components() const { return head.components; }

  void collect(std::vector<ParamRef>& out);
  void collect(std::vector<ConstParamRef>& out) const;
};

struct GruStepCache {
  double x = 0.0;
  Vector h_prev, update, reset, cand, reset_h;
};

struct HeadCache {
  std::vector<Vector> inputs;  // input to each layer
  Vector raw_log_stds;         // before clamping
};

// Gradient of log N-mixture density w.r.t. its inputs.
struct GmmGradient {
  double value = 0.0;
  double d_z = 0.0;
  Vector d_means, d_log_stds, d_logits;
};

struct CondResult {
  double total = 0.0;
  Vector per_dim;
};

struct CondCache {
  std::vector<Vector> states;          // h_0 .. h_{d-1}
  std::vector<HeadCache> heads;        // one per dimension
  std::vector<MixtureParams> mixtures; // one per dimension
  std::vector<GruStepCache> steps;     // d - 1 GRU steps
  Vector z;
};

Vector gru_step(const Gru& p, double x, std::span<const double> h_prev,
                GruStepCache* cache = nullptr);
// Accumulates parameter gradients; returns dL/dx and writes dL/dh_prev.
double gru_step_vjp(const Gru& p, const GruStepCache& cache, std::span<const double> grad_h,
                    Gru& grads, std::span<double> grad_h_prev);

MixtureParams mixture_from_state(const MixtureHead& head, std::span<const double> h,
                                 HeadCache* cache = nullptr);
// Returns dL/dh given dL/d(means, clamped log-stds, logits).
Vector mixture_head_vjp(const MixtureHead& head, const HeadCache& cache,
                        std::span<const double> grad_means, std::span<const double> grad_log_stds,
                        std::span<const double> grad_logits, MixtureHead& grads);

// Normalized mixture weights.
Vector mixture_weights(const MixtureParams& m);
double gmm_log_density(const MixtureParams& m, double z);
GmmGradient gmm_log_density_grad(const MixtureParams& m, double z);
double gmm_sample(const MixtureParams& m, Rng& rng);

CondResult conditional_log_likelihood(const ConditionalModel& c, std::span<const double> z,
                                      CondCache* cache = nullptr);
// dL/dz for L = grad_total * total; parameter gradients accumulated.
Vector conditional_vjp(const ConditionalModel& c, const CondCache& cache, double grad_total,
                       ConditionalModel& grads);
Vector conditional_sample(const ConditionalModel& c, Rng& rng);

}  // namespace red
