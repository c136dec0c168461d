#pragma once

// Negative ELBO: token NLL plus the weighted sum of three divergences,
// KL[q(W)‖N(0,1)], KL[q(Z)‖p(Z|u)] and KL[q(u)‖Beta(α,1)].
//
// The Gaussian and Bernoulli terms default to their closed forms; only the
// stick term is a single-draw Monte-Carlo estimate. KlMode::monte_carlo swaps
// the first two for single-draw estimates at the sampled W and Z as well.

#include <cstdint>
#include <span>
#include <vector>

#include "sbgru/layers.hpp"
#include "sbgru/model.hpp"
#include "sbgru/rng.hpp"
#include "sbgru/stochastic.hpp"
#include "sbgru/tensor.hpp"

namespace sbgru {

inline constexpr double kPiClamp = 1e-7;

struct ElboBreakdown {
  double nll = 0.0;
  double kl_w = 0.0;
  double kl_z = 0.0;
  double kl_u = 0.0;
  double kl_scale = 1.0;
  double total_loss = 0.0;
  double lambda = 0.0;
  std::size_t tokens = 0;
};

enum class KlMode { closed_form, monte_carlo };

// ---- scalar reference forms ----------------------------------------------------

/// Σ 0.5·(mu² + sigma² − 1 − log sigma²)
double kl_gaussian(std::span<const double> mu, std::span<const double> sigma);
/// Σ_k [log q(u_k; a_k, b_k) − log Beta(u_k; α, 1)]
double kl_sticks_mc(std::span<const double> a, std::span<const double> b, double alpha,
                    std::span<const double> u_draw);
/// Σ_{j,k} KL(Bern(π̃_jk) ‖ Bern(π_k)) with π = stick_probs(u_draw) clamped.
/// pi_tilde is row-major [J × K] with K = u_draw.size().
double kl_indicators(std::span<const double> pi_tilde, std::span<const double> u_draw);
/// Σ_t −log softmax(logits_t)[target_t] over rows with nonzero weight.
double nll_tokens(std::span<const double> logits, std::size_t vocab, std::span<const std::size_t> targets,
                  std::span<const double> weight);

// ---- tape forms ------------------------------------------------------------------

Tensor kl_gaussian(const GaussianWeight& w);
/// Single-draw estimate log q(ŵ) − log p(ŵ).
Tensor kl_gaussian_mc(const GaussianWeight& w, const Tensor& weight_draw, std::span<const double> eps);
/// Uses the draw's own uniforms: log(1 − û^a) = log(1 − X)/b exactly.
Tensor kl_sticks_mc(const StickState& s, const Tensor& log_u, std::span<const double> stick_x);
/// Closed-form Bernoulli KL per entry against π_k = exp(cumsum(log_u)).
Tensor kl_indicators(const IndicatorPosterior& z, const Tensor& log_u);
/// Single-draw estimate at the relaxed mask sample.
Tensor kl_indicators_mc(const IndicatorPosterior& z, const Tensor& mask_draw, const Tensor& log_u);
Tensor nll_tokens(const Tensor& logits, std::span<const std::size_t> targets, std::span<const double> weight);

/// Everything the loss needs besides the model and batch.
struct ElboOptions {
  double kl_scale = 1.0;  // batch_size / N_train
  KlMode kl_mode = KlMode::closed_form;
  double lambda = 1.0;
};

struct ElboResult {
  Tensor loss;  // scalar on the tape
  ElboBreakdown parts;
};

/// Teacher-forced loss with explicitly supplied noise (frozen for checks).
ElboResult elbo_loss(const Seq2SeqModel& model, const Batch& batch, const std::vector<NoiseDraws>& draws,
                     RngStream* dropout_rng, const ElboOptions& opts);

/// One-sample loss for training step `step`: draws the layer noise from `rng`,
/// picks λ from the schedule and sets kl_scale = batch.size / n_train.
ElboResult elbo_loss(const Seq2SeqModel& model, const Batch& batch, RngStream& rng, std::uint64_t step,
                     std::size_t n_train, const TemperatureSchedule& sched, KlMode mode = KlMode::closed_form);

}  // namespace sbgru
