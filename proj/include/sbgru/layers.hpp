#pragma once

// Stick-breaking layer mechanics.
//
// A candidate weight matrix W carries a Gaussian posterior N(mu, softplus(rho)²)
// per entry, and every entry has a utility indicator z with Bernoulli
// posterior sigmoid(logit). The prior over indicators in column k is
// Bernoulli(pi_k) where pi_k is the product of the first k stick variables,
// each with a Kumaraswamy(a_k, b_k) posterior. Only the candidate-state weights
// of a GRU get this treatment; update and reset gates stay point estimates.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sbgru/rng.hpp"
#include "sbgru/tensor.hpp"

namespace sbgru {

/// Which posteriors are live in a layer: plain (deterministic GRU), repar
/// (Gaussian weights only), bp (indicators and sticks only), sb (both).
enum class LayerKind { plain, repar, bp, sb };

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);
bool has_gaussian(LayerKind kind);
bool has_indicators(LayerKind kind);

struct GaussianWeight {
  Tensor mu;
  Tensor rho;
  Tensor sigma() const { return softplus(rho); }
};

struct StickState {
  Tensor a_raw;
  Tensor b_raw;
  double alpha = 1.0;
  Tensor a() const { return softplus(a_raw); }
  Tensor b() const { return softplus(b_raw); }
};

struct IndicatorPosterior {
  Tensor logit_pi;
  Tensor pi_tilde() const { return sigmoid(logit_pi); }
};

/// Inverse of softplus for y > 0.
double softplus_inverse(double y);

struct CellInit {
  double alpha = 1.0;
  double sigma_scale = 0.01;  // initial sigma as a fraction of the uniform init bound
  double logit_pi = 3.0;
};

struct SBGRUCell {
  std::size_t input_dim = 0;  // J
  std::size_t units = 0;      // K
  LayerKind kind = LayerKind::plain;

  Tensor w_m, b_m;  // update gate, [(K+J)×K], [K]
  Tensor w_r, b_r;  // reset gate
  GaussianWeight candidate;  // [(K+J)×K]
  Tensor b_y;
  StickState sticks;             // length K
  IndicatorPosterior indicators;  // [(K+J)×K]

  /// Hard mask restored from a compressed checkpoint; overrides thresholding
  /// of the indicator posterior at evaluation time.
  std::optional<std::vector<std::uint8_t>> fixed_mask;

  static SBGRUCell create(std::size_t input_dim, std::size_t units, LayerKind kind, RngStream& rng,
                          const CellInit& init = {});

  std::size_t fan_in() const { return input_dim + units; }

  /// Trainable tensors for this kind, with stable names relative to the cell.
  std::vector<std::pair<std::string, Tensor*>> parameters();
};

// ---- stick-breaking prior ---------------------------------------------------

/// pi_k = u_1 · … · u_k
std::vector<double> stick_probs(std::span<const double> u);
/// Tape version in log space: log pi = cumsum(log u).
Tensor stick_log_probs(const Tensor& log_u);

// ---- dense layer ------------------------------------------------------------

enum class Activation { identity, sigmoid, tanh };

/// y = act(x · (W ⊙ Z) + b) for x:[B×J], W,Z:[J×K], b:[K].
Tensor sb_dense_forward(const Tensor& x, const Tensor& w, const Tensor& z, const Tensor& b, Activation act);

// ---- recurrent steps ----------------------------------------------------------

/// Plain GRU step with the candidate weight at its posterior mean.
Tensor gru_step(const Tensor& x, const Tensor& y_prev, const SBGRUCell& cell);

/// GRU step whose candidate path uses `candidate_weight` (already W ⊙ Z).
Tensor sbgru_step(const Tensor& x, const Tensor& y_prev, const SBGRUCell& cell, const Tensor& candidate_weight);

// ---- noise ---------------------------------------------------------------------

enum class NoiseMode { train, eval };

/// Raw noise for one layer, kept separately so a draw can be replayed.
struct NoiseDraws {
  std::vector<double> eps;     // Gaussian weight noise, one per entry
  std::vector<double> mask_u;  // uniforms for the relaxed indicators
  std::vector<double> stick_x; // uniforms for the sticks
};

/// Realized layer noise: the weight draw, the indicator draw, and the log
/// stick draws. Undefined tensors mean "not sampled" (mean weight, all-ones
/// mask, no sticks).
struct LayerNoise {
  Tensor weight;
  Tensor mask;
  Tensor log_u;
  /// W ⊙ Z, or W when there is no mask.
  Tensor candidate_weight() const;
};

NoiseDraws draw_noise(const SBGRUCell& cell, RngStream& rng);

/// Build the layer noise from fixed draws. In eval mode the draws are ignored:
/// the weight is the posterior mean and the mask is the thresholded posterior
/// (or the cell's fixed mask).
LayerNoise realize_noise(const SBGRUCell& cell, const NoiseDraws& draws, double lambda, NoiseMode mode,
                         double tau);

LayerNoise sample_layer_noise(const SBGRUCell& cell, RngStream& rng, double lambda, NoiseMode mode, double tau);

/// Expected stick profile: pi_k evaluated at the Kumaraswamy means.
std::vector<double> expected_stick_profile(const SBGRUCell& cell);

}  // namespace sbgru
