#include "sbgru/elbo.hpp"

#include <algorithm>
#include <cmath>

#include "sbgru/errors.hpp"

namespace sbgru {

namespace {

double bern_kl(double p, double q) {
  double kl = 0.0;
  if (p > 0.0) kl += p * std::log(p / q);
  if (p < 1.0) kl += (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
  return kl;
}

double softplus_scalar(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

const double kLogPiLo = std::log(kPiClamp);
const double kLogPiHi = std::log1p(-kPiClamp);

/// log(1 − exp(x)) for x < 0.
Tensor log1mexp(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.at(i) < 0.0)) throw DomainError("log1mexp needs a negative argument");
    out[i] = std::log(-std::expm1(x.at(i)));
  }
  return make_result(x.shape(), std::move(out), {x}, [](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (-1.0 / std::expm1(-p.value[i]));
  });
}

/// [K] → [J×K] with every row equal to `row`.
Tensor broadcast_rows(const Tensor& row, std::size_t rows) {
  return add_row(Tensor::zeros({rows, row.numel()}), row);
}

}  // namespace

double kl_gaussian(std::span<const double> mu, std::span<const double> sigma) {
  if (mu.size() != sigma.size()) throw ShapeError("kl_gaussian: mu and sigma differ in size");
  double kl = 0.0;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw DomainError("kl_gaussian: sigma must be positive");
    const double s2 = sigma[i] * sigma[i];
    kl += 0.5 * (mu[i] * mu[i] + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

double kl_sticks_mc(std::span<const double> a, std::span<const double> b, double alpha,
                    std::span<const double> u_draw) {
  if (a.size() != b.size() || a.size() != u_draw.size()) throw ShapeError("kl_sticks_mc: size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double lu = std::log(u_draw[k]);
    kl += kumaraswamy_log_pdf(u_draw[k], a[k], b[k]) - (std::log(alpha) + (alpha - 1.0) * lu);
  }
  return kl;
}

double kl_indicators(std::span<const double> pi_tilde, std::span<const double> u_draw) {
  const std::size_t k = u_draw.size();
  if (k == 0 || pi_tilde.size() % k != 0) throw ShapeError("kl_indicators: pi_tilde is not [J × K]");
  auto pi = stick_probs(u_draw);
  for (double& p : pi) p = std::clamp(p, kPiClamp, 1.0 - kPiClamp);
  double kl = 0.0;
  for (std::size_t i = 0; i < pi_tilde.size(); ++i) kl += bern_kl(pi_tilde[i], pi[i % k]);
  return kl;
}

double nll_tokens(std::span<const double> logits, std::size_t vocab, std::span<const std::size_t> targets,
                  std::span<const double> weight) {
  if (logits.size() != targets.size() * vocab || weight.size() != targets.size())
    throw ShapeError("nll_tokens: logits/targets/weight disagree");
  double nll = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (weight[t] == 0.0) continue;
    if (targets[t] >= vocab) throw ShapeError("nll_tokens: target index outside vocabulary");
    const double* row = logits.data() + t * vocab;
    const double mx = *std::max_element(row, row + vocab);
    double z = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) z += std::exp(row[v] - mx);
    nll += weight[t] * (mx + std::log(z) - row[targets[t]]);
  }
  return nll;
}

Tensor kl_gaussian(const GaussianWeight& w) {
  const Tensor sigma = w.sigma();
  const Tensor per = add(add(mul(w.mu, w.mu), mul(sigma, sigma)), scale(log(sigma), -2.0));
  return scale(add_scalar(sum(per), -static_cast<double>(w.mu.numel())), 0.5);
}

Tensor kl_gaussian_mc(const GaussianWeight& w, const Tensor& weight_draw, std::span<const double> eps) {
  if (eps.size() != w.mu.numel()) throw ShapeError("kl_gaussian_mc: noise size mismatch");
  double eps_sq = 0.0;
  for (double e : eps) eps_sq += e * e;
  // log N(ŵ; mu, σ²) − log N(ŵ; 0, 1) with ŵ = mu + σ·eps; 2π constants cancel.
  const Tensor log_q = add_scalar(scale(sum(log(w.sigma())), -1.0), -0.5 * eps_sq);
  const Tensor log_p = scale(sum(mul(weight_draw, weight_draw)), -0.5);
  return sub(log_q, log_p);
}

Tensor kl_sticks_mc(const StickState& s, const Tensor& log_u, std::span<const double> stick_x) {
  if (stick_x.size() != log_u.numel()) throw ShapeError("kl_sticks_mc: draw size mismatch");
  std::vector<double> log_1mx(stick_x.size());
  for (std::size_t k = 0; k < stick_x.size(); ++k) log_1mx[k] = std::log1p(-stick_x[k]);
  const Tensor a = s.a(), b = s.b();
  const Tensor log_1m_ua = mul(Tensor::from(log_u.shape(), std::move(log_1mx)), reciprocal(b));
  const Tensor log_q = add(add(log(a), log(b)),
                           add(mul(add_scalar(a, -1.0), log_u), mul(add_scalar(b, -1.0), log_1m_ua)));
  const Tensor log_p = add_scalar(scale(log_u, s.alpha - 1.0), std::log(s.alpha));
  return sum(sub(log_q, log_p));
}

Tensor kl_indicators(const IndicatorPosterior& z, const Tensor& log_u) {
  const Tensor log_pi = stick_log_probs(log_u);
  const Tensor& logit = z.logit_pi;
  const std::size_t k = log_pi.numel();
  if (logit.cols() != k) throw ShapeError("kl_indicators: logits and sticks disagree on K");
  const std::size_t n = logit.numel();
  std::vector<double> q(k);
  std::vector<std::uint8_t> clamped(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double raw = std::exp(log_pi.at(c));
    q[c] = std::clamp(raw, kPiClamp, 1.0 - kPiClamp);
    clamped[c] = raw != q[c];
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double l = logit.at(i), qc = q[i % k];
    const double lp = -softplus_scalar(-l), l1p = -softplus_scalar(l);
    const double p = std::exp(lp);
    kl += p * (lp - std::log(qc)) + (1.0 - p) * (l1p - std::log1p(-qc));
  }
  return make_result({}, {kl}, {logit, log_pi},
                     [q = std::move(q), clamped = std::move(clamped), k](const Node& self) {
                       Node& pl = *self.parents[0];
                       Node& ps = *self.parents[1];
                       const double g = self.grad[0];
                       const std::size_t n = pl.value.size();
                       std::vector<double> ds(k, 0.0);
                       auto* gl = pl.requires_grad ? &pl.grad_buffer() : nullptr;
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t c = i % k;
                         const double l = pl.value[i], qc = q[c];
                         const double p = 1.0 / (1.0 + std::exp(-l));
                         // dKL/dl = p(1-p)(l - logit q);  dKL/dlog q = (q - p)/(1 - q)
                         if (gl) (*gl)[i] += g * p * (1.0 - p) * (l - (std::log(qc) - std::log1p(-qc)));
                         if (!clamped[c]) ds[c] += (qc - p) / (1.0 - qc);
                       }
                       if (ps.requires_grad) {
                         auto& gs = ps.grad_buffer();
                         for (std::size_t c = 0; c < k; ++c) gs[c] += g * ds[c];
                       }
                     });
}

Tensor kl_indicators_mc(const IndicatorPosterior& z, const Tensor& mask_draw, const Tensor& log_u) {
  const std::size_t rows = z.logit_pi.rows();
  const Tensor log_pi = clamp(stick_log_probs(log_u), kLogPiLo, kLogPiHi);
  const Tensor log_pi_m = broadcast_rows(log_pi, rows);
  const Tensor log_1m_pi_m = broadcast_rows(log1mexp(log_pi), rows);
  const Tensor log_q1 = log_sigmoid(z.logit_pi);
  const Tensor log_q0 = log_sigmoid(scale(z.logit_pi, -1.0));
  const Tensor on = mul(mask_draw, sub(log_q1, log_pi_m));
  const Tensor off = mul(one_minus(mask_draw), sub(log_q0, log_1m_pi_m));
  return sum(add(on, off));
}

Tensor nll_tokens(const Tensor& logits, std::span<const std::size_t> targets, std::span<const double> weight) {
  for (std::size_t t = 0; t < targets.size(); ++t)
    if (weight[t] != 0.0 && targets[t] >= logits.cols())
      throw ShapeError("nll_tokens: target index outside vocabulary");
  return scale(gather_sum(log_softmax_rows(logits), targets, weight), -1.0);
}

ElboResult elbo_loss(const Seq2SeqModel& model, const Batch& batch, const std::vector<NoiseDraws>& draws,
                     RngStream* dropout_rng, const ElboOptions& opts) {
  ForwardContext ctx;
  ctx.mode = NoiseMode::train;
  ctx.layer_noise = model.realize_noise(draws, opts.lambda, NoiseMode::train, 0.0);
  ctx.dropout_rng = dropout_rng;
  const Tensor logits = model.forward_teacher_forced(batch, ctx);
  const Tensor nll = nll_tokens(logits, batch.tgt_out, batch.tgt_weight);

  ElboResult res;
  res.parts.kl_scale = opts.kl_scale;
  res.parts.lambda = opts.lambda;
  res.parts.tokens = batch.target_tokens();
  res.parts.nll = nll.item();

  std::vector<Tensor> w_terms, z_terms, u_terms;
  for (std::size_t i = 0; i < model.num_layers(); ++i) {
    const SBGRUCell& cell = model.layer(i);
    const LayerNoise& noise = ctx.layer_noise[i];
    if (has_gaussian(cell.kind))
      w_terms.push_back(opts.kl_mode == KlMode::closed_form
                            ? kl_gaussian(cell.candidate)
                            : kl_gaussian_mc(cell.candidate, noise.weight, draws.at(i).eps));
    if (has_indicators(cell.kind)) {
      z_terms.push_back(opts.kl_mode == KlMode::closed_form ? kl_indicators(cell.indicators, noise.log_u)
                                                             : kl_indicators_mc(cell.indicators, noise.mask, noise.log_u));
      u_terms.push_back(kl_sticks_mc(cell.sticks, noise.log_u, draws.at(i).stick_x));
    }
  }
  auto total_of = [](const std::vector<Tensor>& ts) {
    Tensor acc;
    for (const auto& t : ts) {
      if (!t.defined()) continue;
      acc = acc.defined() ? add(acc, t) : t;
    }
    return acc;
  };
  const Tensor kw = total_of(w_terms), kz = total_of(z_terms), ku = total_of(u_terms);
  res.parts.kl_w = kw.defined() ? kw.item() : 0.0;
  res.parts.kl_z = kz.defined() ? kz.item() : 0.0;
  res.parts.kl_u = ku.defined() ? ku.item() : 0.0;

  const Tensor kl = total_of({kw, kz, ku});
  if (opts.kl_scale == 0.0 || !kl.defined()) {
    res.loss = nll;
  } else {
    res.loss = add(nll, scale(kl, opts.kl_scale));
  }
  res.parts.total_loss = res.loss.item();
  return res;
}

ElboResult elbo_loss(const Seq2SeqModel& model, const Batch& batch, RngStream& rng, std::uint64_t step,
                     std::size_t n_train, const TemperatureSchedule& sched, KlMode mode) {
  if (n_train == 0) throw ContractError("elbo_loss: n_train must be positive");
  RngStream noise_rng = rng.split(2 * step);
  RngStream dropout_rng = rng.split(2 * step + 1);
  const auto draws = model.draw_noise(noise_rng);
  ElboOptions opts;
  opts.kl_scale = static_cast<double>(batch.size) / static_cast<double>(n_train);
  opts.kl_mode = mode;
  opts.lambda = temperature(step, sched);
  return elbo_loss(model, batch, draws, &dropout_rng, opts);
}

}  // namespace sbgru
