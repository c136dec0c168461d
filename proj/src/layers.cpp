#include "sbgru/layers.hpp"

#include <cmath>

#include "sbgru/compression.hpp"
#include "sbgru/errors.hpp"
#include "sbgru/stochastic.hpp"

namespace sbgru {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::plain: return "plain";
    case LayerKind::repar: return "repar";
    case LayerKind::bp: return "bp";
    case LayerKind::sb: return "sb";
  }
  return "?";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "plain") return LayerKind::plain;
  if (text == "repar") return LayerKind::repar;
  if (text == "bp") return LayerKind::bp;
  if (text == "sb") return LayerKind::sb;
  throw ContractError("unknown layer kind '" + std::string(text) + "' (expected plain|repar|bp|sb)");
}

bool has_gaussian(LayerKind kind) { return kind == LayerKind::repar || kind == LayerKind::sb; }
bool has_indicators(LayerKind kind) { return kind == LayerKind::bp || kind == LayerKind::sb; }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inverse needs a positive argument");
  return y > 30.0 ? y : std::log(std::expm1(y));
}

SBGRUCell SBGRUCell::create(std::size_t input_dim, std::size_t units, LayerKind kind, RngStream& rng,
                            const CellInit& init) {
  SBGRUCell c;
  c.input_dim = input_dim;
  c.units = units;
  c.kind = kind;
  const std::size_t rows = input_dim + units;
  const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
  auto uniform_matrix = [&] {
    std::vector<double> v(rows * units);
    for (double& x : v) x = bound * (2.0 * rng.uniform() - 1.0);
    return Tensor::from({rows, units}, std::move(v), true);
  };
  c.w_m = uniform_matrix();
  c.w_r = uniform_matrix();
  c.candidate.mu = uniform_matrix();
  c.b_m = Tensor::zeros({units}, true);
  c.b_r = Tensor::zeros({units}, true);
  c.b_y = Tensor::zeros({units}, true);
  c.candidate.rho = Tensor::full({rows, units}, softplus_inverse(init.sigma_scale * bound), true);
  c.indicators.logit_pi = Tensor::full({rows, units}, init.logit_pi, true);
  c.sticks.alpha = init.alpha;
  c.sticks.a_raw = Tensor::full({units}, softplus_inverse(init.alpha), true);
  c.sticks.b_raw = Tensor::full({units}, softplus_inverse(1.0), true);
  return c;
}

std::vector<std::pair<std::string, Tensor*>> SBGRUCell::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{
      {"W_m", &w_m}, {"b_m", &b_m}, {"W_r", &w_r}, {"b_r", &b_r}, {"W_y.mu", &candidate.mu}, {"b_y", &b_y}};
  if (has_gaussian(kind)) out.emplace_back("W_y.rho", &candidate.rho);
  if (has_indicators(kind)) {
    out.emplace_back("Z.logit", &indicators.logit_pi);
    out.emplace_back("u.a_raw", &sticks.a_raw);
    out.emplace_back("u.b_raw", &sticks.b_raw);
  }
  return out;
}

std::vector<double> stick_probs(std::span<const double> u) {
  std::vector<double> pi(u.size());
  double run = 1.0;
  for (std::size_t k = 0; k < u.size(); ++k) pi[k] = run *= u[k];
  return pi;
}

Tensor stick_log_probs(const Tensor& log_u) { return cumsum(log_u); }

Tensor sb_dense_forward(const Tensor& x, const Tensor& w, const Tensor& z, const Tensor& b, Activation act) {
  const Tensor x2 = x.rank() == 1 ? Tensor::from({1, x.numel()}, x.value()) : x;
  if (x.rank() == 1 && x.requires_grad()) throw ContractError("sb_dense_forward: pass a [1×J] matrix to differentiate x");
  Tensor y = add_row(matmul(x2, mul(w, z)), b);
  switch (act) {
    case Activation::identity: break;
    case Activation::sigmoid: y = sigmoid(y); break;
    case Activation::tanh: y = tanh(y); break;
  }
  return y;
}

Tensor gru_step(const Tensor& x, const Tensor& y_prev, const SBGRUCell& cell) {
  return sbgru_step(x, y_prev, cell, cell.candidate.mu);
}

Tensor sbgru_step(const Tensor& x, const Tensor& y_prev, const SBGRUCell& cell, const Tensor& candidate_weight) {
  if (x.cols() != cell.input_dim || y_prev.cols() != cell.units || x.rows() != y_prev.rows())
    throw ShapeError("sbgru_step: x " + shape_str(x.shape()) + " / state " + shape_str(y_prev.shape()) +
                     " do not fit a cell with J=" + std::to_string(cell.input_dim) +
                     ", K=" + std::to_string(cell.units));
  const Tensor h = concat_cols(y_prev, x);
  const Tensor m = sigmoid(add_row(matmul(h, cell.w_m), cell.b_m));
  const Tensor r = sigmoid(add_row(matmul(h, cell.w_r), cell.b_r));
  const Tensor hr = concat_cols(mul(r, y_prev), x);
  const Tensor cand = tanh(add_row(matmul(hr, candidate_weight), cell.b_y));
  return add(mul(one_minus(m), y_prev), mul(m, cand));
}

Tensor LayerNoise::candidate_weight() const { return mask.defined() ? mul(weight, mask) : weight; }

NoiseDraws draw_noise(const SBGRUCell& cell, RngStream& rng) {
  NoiseDraws d;
  const std::size_t n = cell.fan_in() * cell.units;
  if (has_gaussian(cell.kind)) {
    d.eps.resize(n);
    for (double& e : d.eps) e = rng.normal();
  }
  if (has_indicators(cell.kind)) {
    d.mask_u.resize(n);
    for (double& u : d.mask_u) u = clamp_uniform(rng.uniform());
    d.stick_x.resize(cell.units);
    for (double& x : d.stick_x) x = clamp_uniform(rng.uniform());
  }
  return d;
}

LayerNoise realize_noise(const SBGRUCell& cell, const NoiseDraws& draws, double lambda, NoiseMode mode,
                         double tau) {
  LayerNoise out;
  if (mode == NoiseMode::eval) {
    out.weight = cell.candidate.mu;
    if (has_indicators(cell.kind)) {
      std::vector<std::uint8_t> bits;
      if (cell.fixed_mask) {
        bits = *cell.fixed_mask;
      } else {
        NoGradGuard guard;
        bits = prune_mask(cell.indicators.pi_tilde().value(), tau);
      }
      std::vector<double> m(bits.begin(), bits.end());
      out.mask = Tensor::from(cell.candidate.mu.shape(), std::move(m));
    }
    return out;
  }
  if (!(lambda > 0.0)) throw ContractError("sample_layer_noise: train mode requires lambda > 0");
  out.weight = has_gaussian(cell.kind) ? sample_gaussian(cell.candidate.mu, cell.candidate.sigma(), draws.eps)
                                       : cell.candidate.mu;
  if (has_indicators(cell.kind)) {
    out.mask = sample_binary_concrete(cell.indicators.logit_pi, lambda, draws.mask_u);
    out.log_u = kumaraswamy_log_sample(cell.sticks.a(), cell.sticks.b(), draws.stick_x);
  }
  return out;
}

LayerNoise sample_layer_noise(const SBGRUCell& cell, RngStream& rng, double lambda, NoiseMode mode, double tau) {
  if (mode == NoiseMode::eval) return realize_noise(cell, {}, lambda, mode, tau);
  return realize_noise(cell, draw_noise(cell, rng), lambda, mode, tau);
}

std::vector<double> expected_stick_profile(const SBGRUCell& cell) {
  std::vector<double> u(cell.units);
  for (std::size_t k = 0; k < cell.units; ++k) {
    const double a = std::log1p(std::exp(-std::abs(cell.sticks.a_raw.at(k)))) + std::max(cell.sticks.a_raw.at(k), 0.0);
    const double b = std::log1p(std::exp(-std::abs(cell.sticks.b_raw.at(k)))) + std::max(cell.sticks.b_raw.at(k), 0.0);
    u[k] = kumaraswamy_mean(a, b);
  }
  return stick_probs(u);
}

}  // namespace sbgru
