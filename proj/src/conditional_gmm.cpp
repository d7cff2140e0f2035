#include "red/conditional_gmm.hpp"

#include <algorithm>
#include <cmath>

#include "red/errors.hpp"

namespace red {

namespace {

template <class Ref, class Self>
void collect_gru(Self& g, const std::string& prefix, std::vector<Ref>& out) {
  const std::size_t h = g.hidden;
  out.push_back({prefix + "in_update", {h}, g.in_update});
  out.push_back({prefix + "rec_update", {h, h}, g.rec_update});
  out.push_back({prefix + "bias_update", {h}, g.bias_update});
  out.push_back({prefix + "in_reset", {h}, g.in_reset});
  out.push_back({prefix + "rec_reset", {h, h}, g.rec_reset});
  out.push_back({prefix + "bias_reset", {h}, g.bias_reset});
  out.push_back({prefix + "in_cand", {h}, g.in_cand});
  out.push_back({prefix + "rec_cand", {h, h}, g.rec_cand});
  out.push_back({prefix + "bias_cand", {h}, g.bias_cand});
  out.push_back({prefix + "h0", {h}, g.h0});
}

template <class Ref, class Self>
void collect_head(Self& head, const std::string& prefix, std::vector<Ref>& out) {
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    auto& layer = head.layers[l];
    const std::string name = prefix + "fc" + std::to_string(l) + ".";
    out.push_back({name + "W", {layer.out, layer.in}, layer.weights});
    out.push_back({name + "b", {layer.out}, layer.bias});
  }
}

// out = W_in * x + W_rec * h + bias, all hidden-sized.
void affine_gate(const Vector& in_w, const Vector& rec_w, const Vector& bias, double x,
                 std::span<const double> h, Vector& out) {
  const std::size_t n = bias.size();
  out.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    double acc = in_w[r] * x + bias[r];
    const double* row = rec_w.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      acc += row[c] * h[c];
    }
    out[r] = acc;
  }
}

// Accumulate gradients of affine_gate and add W_rec^T g into grad_h.
double affine_gate_vjp(const Vector& in_w, const Vector& rec_w, std::span<const double> g, double x,
                       std::span<const double> h, Vector& g_in_w, Vector& g_rec_w, Vector& g_bias,
                       std::span<double> grad_h) {
  const std::size_t n = g.size();
  double gx = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double gr = g[r];
    g_in_w[r] += gr * x;
    g_bias[r] += gr;
    gx += gr * in_w[r];
    const double* row = rec_w.data() + r * n;
    double* grow = g_rec_w.data() + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      grow[c] += gr * h[c];
      grad_h[c] += gr * row[c];
    }
  }
  return gx;
}

}  // namespace

std::string to_string(CandidateActivation a) {
  return a == CandidateActivation::Sigmoid ? "sigmoid" : "tanh";
}

CandidateActivation candidate_activation_from_string(const std::string& s) {
  if (s == "sigmoid") return CandidateActivation::Sigmoid;
  if (s == "tanh") return CandidateActivation::Tanh;
  throw DomainError("unknown candidate activation '" + s + "'");
}

Gru Gru::zeros(std::size_t hidden, CandidateActivation candidate) {
  Gru g;
  g.hidden = hidden;
  g.candidate = candidate;
  for (Vector* v : {&g.in_update, &g.bias_update, &g.in_reset, &g.bias_reset, &g.in_cand,
                    &g.bias_cand, &g.h0}) {
    v->assign(hidden, 0.0);
  }
  for (Vector* v : {&g.rec_update, &g.rec_reset, &g.rec_cand}) {
    v->assign(hidden * hidden, 0.0);
  }
  return g;
}

void Gru::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  collect_gru(*this, prefix, out);
}
void Gru::collect(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  collect_gru(*this, prefix, out);
}

MixtureHead MixtureHead::zeros(std::size_t in, std::size_t num_hidden, std::size_t components) {
  MixtureHead head;
  head.components = components;
  std::size_t width = in;
  for (std::size_t l = 0; l <= num_hidden; ++l) {
    DenseLayer layer;
    layer.in = width;
    layer.out = (l == num_hidden) ? 3 * components : in;
    layer.weights.assign(layer.out * layer.in, 0.0);
    layer.bias.assign(layer.out, 0.0);
    width = layer.out;
    head.layers.push_back(std::move(layer));
  }
  return head;
}

void MixtureHead::collect(const std::string& prefix, std::vector<ParamRef>& out) {
  collect_head(*this, prefix, out);
}
void MixtureHead::collect(const std::string& prefix, std::vector<ConstParamRef>& out) const {
  collect_head(*this, prefix, out);
}

void ConditionalModel::collect(std::vector<ParamRef>& out) {
  gru.collect("gru.", out);
  head.collect("head.", out);
}
void ConditionalModel::collect(std::vector<ConstParamRef>& out) const {
  gru.collect("gru.", out);
  head.collect("head.", out);
}

Vector gru_step(const Gru& p, double x, std::span<const double> h_prev, GruStepCache* cache) {
  const std::size_t n = p.hidden;
  if (h_prev.size() != n) {
    throw ShapeError("gru_step: hidden state has wrong size");
  }
  Vector u, r, c;
  affine_gate(p.in_update, p.rec_update, p.bias_update, x, h_prev, u);
  affine_gate(p.in_reset, p.rec_reset, p.bias_reset, x, h_prev, r);
  for (std::size_t k = 0; k < n; ++k) {
    u[k] = sigmoid(u[k]);
    r[k] = sigmoid(r[k]);
  }
  Vector rh(n);
  for (std::size_t k = 0; k < n; ++k) {
    rh[k] = r[k] * h_prev[k];
  }
  affine_gate(p.in_cand, p.rec_cand, p.bias_cand, x, rh, c);
  for (std::size_t k = 0; k < n; ++k) {
    c[k] = p.candidate == CandidateActivation::Sigmoid ? sigmoid(c[k]) : std::tanh(c[k]);
  }
  Vector h(n);
  for (std::size_t k = 0; k < n; ++k) {
    h[k] = u[k] * h_prev[k] + (1.0 - u[k]) * c[k];
  }
  if (cache != nullptr) {
    cache->x = x;
    cache->h_prev.assign(h_prev.begin(), h_prev.end());
    cache->update = std::move(u);
    cache->reset = std::move(r);
    cache->cand = std::move(c);
    cache->reset_h = std::move(rh);
  }
  return h;
}

double gru_step_vjp(const Gru& p, const GruStepCache& cache, std::span<const double> grad_h,
                    Gru& grads, std::span<double> grad_h_prev) {
  const std::size_t n = p.hidden;
  if (cache.h_prev.size() != n || cache.update.size() != n) {
    throw ContractError("gru_step_vjp: forward cache missing");
  }
  const Vector& h = cache.h_prev;
  const Vector& u = cache.update;
  const Vector& r = cache.reset;
  const Vector& c = cache.cand;

  Vector g_update(n), g_cand(n);
  for (std::size_t k = 0; k < n; ++k) {
    grad_h_prev[k] = grad_h[k] * u[k];
    g_update[k] = grad_h[k] * (h[k] - c[k]) * u[k] * (1.0 - u[k]);
    const double dact = p.candidate == CandidateActivation::Sigmoid ? c[k] * (1.0 - c[k])
                                                                    : 1.0 - c[k] * c[k];
    g_cand[k] = grad_h[k] * (1.0 - u[k]) * dact;
  }

  Vector g_reset_h(n, 0.0);
  double gx = affine_gate_vjp(p.in_cand, p.rec_cand, g_cand, cache.x, cache.reset_h, grads.in_cand,
                              grads.rec_cand, grads.bias_cand, g_reset_h);
  Vector g_reset(n);
  for (std::size_t k = 0; k < n; ++k) {
    grad_h_prev[k] += g_reset_h[k] * r[k];
    g_reset[k] = g_reset_h[k] * h[k] * r[k] * (1.0 - r[k]);
  }
  gx += affine_gate_vjp(p.in_reset, p.rec_reset, g_reset, cache.x, h, grads.in_reset,
                        grads.rec_reset, grads.bias_reset, grad_h_prev);
  gx += affine_gate_vjp(p.in_update, p.rec_update, g_update, cache.x, h, grads.in_update,
                        grads.rec_update, grads.bias_update, grad_h_prev);
  return gx;
}

MixtureParams mixture_from_state(const MixtureHead& head, std::span<const double> h,
                                 HeadCache* cache) {
  if (head.layers.empty() || h.size() != head.layers.front().in) {
    throw ShapeError("mixture_from_state: state size does not match head input");
  }
  if (cache != nullptr) {
    cache->inputs.clear();
  }
  Vector act(h.begin(), h.end());
  for (std::size_t l = 0; l < head.layers.size(); ++l) {
    const DenseLayer& layer = head.layers[l];
    Vector next(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double acc = layer.bias[o];
      const double* row = layer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        acc += row[i] * act[i];
      }
      next[o] = (l + 1 < head.layers.size()) ? std::tanh(acc) : acc;
    }
    if (cache != nullptr) {
      cache->inputs.push_back(std::move(act));
    }
    act = std::move(next);
  }
  const std::size_t k = head.components;
  MixtureParams m;
  m.means.assign(act.begin(), act.begin() + static_cast<std::ptrdiff_t>(k));
  m.log_stds.assign(act.begin() + static_cast<std::ptrdiff_t>(k),
                    act.begin() + static_cast<std::ptrdiff_t>(2 * k));
  m.logits.assign(act.begin() + static_cast<std::ptrdiff_t>(2 * k), act.end());
  if (cache != nullptr) {
    cache->raw_log_stds = m.log_stds;
  }
  for (double& s : m.log_stds) {
    s = std::clamp(s, kMinLogStd, kMaxLogStd);
  }
  return m;
}

Vector mixture_head_vjp(const MixtureHead& head, const HeadCache& cache,
                        std::span<const double> grad_means, std::span<const double> grad_log_stds,
                        std::span<const double> grad_logits, MixtureHead& grads) {
  if (cache.inputs.size() != head.layers.size()) {
    throw ContractError("mixture_head_vjp: forward cache missing");
  }
  const std::size_t k = head.components;
  Vector g(3 * k);
  for (std::size_t j = 0; j < k; ++j) {
    g[j] = grad_means[j];
    const double raw = cache.raw_log_stds[j];
    g[k + j] = (raw > kMinLogStd && raw < kMaxLogStd) ? grad_log_stds[j] : 0.0;
    g[2 * k + j] = grad_logits[j];
  }
  for (std::size_t l = head.layers.size(); l-- > 0;) {
    const DenseLayer& layer = head.layers[l];
    DenseLayer& glayer = grads.layers[l];
    const Vector& in = cache.inputs[l];
    Vector g_in(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double go = g[o];
      glayer.bias[o] += go;
      const double* row = layer.weights.data() + o * layer.in;
      double* grow = glayer.weights.data() + o * layer.in;
      for (std::size_t i = 0; i < layer.in; ++i) {
        grow[i] += go * in[i];
        g_in[i] += go * row[i];
      }
    }
    if (l > 0) {
      // `in` is the tanh output of layer l-1.
      for (std::size_t i = 0; i < layer.in; ++i) {
        g_in[i] *= 1.0 - in[i] * in[i];
      }
    }
    g = std::move(g_in);
  }
  return g;
}

Vector mixture_weights(const MixtureParams& m) {
  const double norm = log_sum_exp(m.logits);
  Vector w(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    w[k] = std::exp(m.logits[k] - norm);
  }
  return w;
}

double gmm_log_density(const MixtureParams& m, double z) {
  const double norm = log_sum_exp(m.logits);
  Vector terms(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    terms[k] = m.logits[k] - norm + gaussian_logpdf(z, m.means[k], std::exp(m.log_stds[k]));
  }
  return log_sum_exp(terms);
}

GmmGradient gmm_log_density_grad(const MixtureParams& m, double z) {
  const std::size_t n = m.size();
  const double norm = log_sum_exp(m.logits);
  Vector terms(n), scaled(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double sigma = std::exp(m.log_stds[k]);
    scaled[k] = (z - m.means[k]) / sigma;
    terms[k] = m.logits[k] - norm - 0.5 * kLogTwoPi - m.log_stds[k] - 0.5 * scaled[k] * scaled[k];
  }
  GmmGradient g;
  g.value = log_sum_exp(terms);
  g.d_means.resize(n);
  g.d_log_stds.resize(n);
  g.d_logits.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double resp = std::exp(terms[k] - g.value);
    const double sigma = std::exp(m.log_stds[k]);
    g.d_means[k] = resp * scaled[k] / sigma;
    g.d_log_stds[k] = resp * (scaled[k] * scaled[k] - 1.0);
    g.d_logits[k] = resp - std::exp(m.logits[k] - norm);
    g.d_z -= g.d_means[k];
  }
  return g;
}

double gmm_sample(const MixtureParams& m, Rng& rng) {
  const Vector w = mixture_weights(m);
  const double u = rng.uniform();
  std::size_t pick = w.size() - 1;
  double cdf = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    cdf += w[k];
    if (u < cdf) {
      pick = k;
      break;
    }
  }
  return m.means[pick] + std::exp(m.log_stds[pick]) * rng.normal();
}

CondResult conditional_log_likelihood(const ConditionalModel& c, std::span<const double> z,
                                      CondCache* cache) {
  const std::size_t d = c.dim;
  if (z.size() != d) {
    throw ShapeError("conditional_log_likelihood: expected dimension " + std::to_string(d) +
                     ", got " + std::to_string(z.size()));
  }
  if (cache != nullptr) {
    cache->states.assign(d, {});
    cache->heads.assign(d, {});
    cache->mixtures.assign(d, {});
    cache->steps.assign(d > 0 ? d - 1 : 0, {});
    cache->z.assign(z.begin(), z.end());
  }
  CondResult out;
  out.per_dim.assign(d, 0.0);
  Vector h = c.gru.h0;
  for (std::size_t i = 0; i < d; ++i) {
    MixtureParams m = mixture_from_state(c.head, h, cache ? &cache->heads[i] : nullptr);
    out.per_dim[i] = gmm_log_density(m, z[i]);
    out.total += out.per_dim[i];
    if (cache != nullptr) {
      cache->mixtures[i] = std::move(m);
    }
    if (i + 1 < d) {
      Vector next = gru_step(c.gru, z[i], h, cache ? &cache->steps[i] : nullptr);
      if (cache != nullptr) {
        cache->states[i] = std::move(h);
      }
      h = std::move(next);
    } else if (cache != nullptr) {
      cache->states[i] = std::move(h);
    }
  }
  return out;
}

Vector conditional_vjp(const ConditionalModel& c, const CondCache& cache, double grad_total,
                       ConditionalModel& grads) {
  const std::size_t d = c.dim;
  const std::size_t hs = c.gru.hidden;
  if (cache.mixtures.size() != d || cache.z.size() != d) {
    throw ContractError("conditional_vjp: forward cache missing");
  }
  Vector grad_z(d, 0.0);
  Vector grad_state(hs, 0.0);  // dL/dh_i arriving from GRU step i
  Vector grad_prev(hs);
  Vector gm(c.components()), gs(c.components()), gl(c.components());
  for (std::size_t i = d; i-- > 0;) {
    const GmmGradient g = gmm_log_density_grad(cache.mixtures[i], cache.z[i]);
    grad_z[i] += grad_total * g.d_z;
    for (std::size_t k = 0; k < c.components(); ++k) {
      gm[k] = grad_total * g.d_means[k];
      gs[k] = grad_total * g.d_log_stds[k];
      gl[k] = grad_total * g.d_logits[k];
    }
    const Vector g_head = mixture_head_vjp(c.head, cache.heads[i], gm, gs, gl, grads.head);
    for (std::size_t k = 0; k < hs; ++k) {
      grad_state[k] += g_head[k];
    }
    if (i > 0) {
      grad_z[i - 1] += gru_step_vjp(c.gru, cache.steps[i - 1], grad_state, grads.gru, grad_prev);
      grad_state.swap(grad_prev);
    }
  }
  for (std::size_t k = 0; k < hs; ++k) {
    grads.gru.h0[k] += grad_state[k];
  }
  return grad_z;
}

Vector conditional_sample(const ConditionalModel& c, Rng& rng) {
  const std::size_t d = c.dim;
  Vector z(d);
  Vector h = c.gru.h0;
  for (std::size_t i = 0; i < d; ++i) {
    z[i] = gmm_sample(mixture_from_state(c.head, h), rng);
    if (i + 1 < d) {
      h = gru_step(c.gru, z[i], h);
    }
  }
  return z;
}

}  // namespace red
