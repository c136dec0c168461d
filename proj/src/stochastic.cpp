#include "sbgru/stochastic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sbgru/errors.hpp"

namespace sbgru {

namespace {

bool in_open_unit(double x) { return x > 0.0 && x < 1.0; }

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// At low temperature sigmoid(x) rounds to exactly 1 for x above ~37; keep
// relaxed samples strictly inside (0, 1).
constexpr double kBelowOne = 1.0 - 0x1p-53;

double relaxed(double x) { return std::min(sigmoid_scalar(x), kBelowOne); }

}  // namespace

double clamp_uniform(double u) { return std::clamp(u, kUniformEps, 1.0 - kUniformEps); }

double sample_gaussian(double mu, double sigma, double eps) {
  if (sigma < 0.0) throw ContractError("sample_gaussian: negative sigma");
  return mu + sigma * eps;
}

double sample_kumaraswamy(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("sample_kumaraswamy: a and b must be positive");
  if (!in_open_unit(x)) throw ContractError("sample_kumaraswamy: X must lie in (0,1), got " + std::to_string(x));
  const double v = -std::expm1(std::log1p(-x) / b);
  return std::pow(v, 1.0 / a);
}

double kumaraswamy_log_pdf(double u, double a, double b) {
  if (!in_open_unit(u)) throw DomainError("kumaraswamy_log_pdf: u must lie in (0,1), got " + std::to_string(u));
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("kumaraswamy_log_pdf: a and b must be positive");
  return std::log(a) + std::log(b) + (a - 1.0) * std::log(u) + (b - 1.0) * std::log1p(-std::pow(u, a));
}

double kumaraswamy_mean(double a, double b) {
  const double s = 1.0 + 1.0 / a;
  return b * std::exp(std::lgamma(s) + std::lgamma(b) - std::lgamma(s + b));
}

double sample_binary_concrete(double log_alpha, double lambda, double u) {
  if (!(lambda > 0.0)) throw ContractError("sample_binary_concrete: lambda must be positive");
  if (!in_open_unit(u)) throw DomainError("sample_binary_concrete: U must lie in (0,1), got " + std::to_string(u));
  return relaxed((log_alpha + std::log(u) - std::log1p(-u)) / lambda);
}

double temperature(std::uint64_t step, const TemperatureSchedule& sched) {
  const std::uint64_t every = std::max<std::uint64_t>(1, sched.update_every);
  const double held = static_cast<double>((step / every) * every);
  return std::max(sched.lambda_min, sched.lambda0 * std::exp(-sched.decay_rate * held));
}

Tensor sample_gaussian(const Tensor& mu, const Tensor& sigma, std::span<const double> eps) {
  if (eps.size() != mu.numel()) throw ShapeError("sample_gaussian: noise size does not match mu");
  const Tensor noise = Tensor::from(mu.shape(), {eps.begin(), eps.end()});
  return add(mu, mul(sigma, noise));
}

Tensor kumaraswamy_log_sample(const Tensor& a, const Tensor& b, std::span<const double> x) {
  if (a.shape() != b.shape() || x.size() != a.numel())
    throw ShapeError("kumaraswamy_log_sample: a, b and noise must agree in size");
  const std::size_t n = a.numel();
  std::vector<double> log_1mx(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!in_open_unit(x[i])) throw ContractError("kumaraswamy_log_sample: X must lie in (0,1)");
    if (!(a.at(i) > 0.0) || !(b.at(i) > 0.0)) throw ContractError("kumaraswamy_log_sample: a, b must be positive");
    log_1mx[i] = std::log1p(-x[i]);
    const double v = -std::expm1(log_1mx[i] / b.at(i));
    out[i] = std::log(v) / a.at(i);
  }
  return make_result(a.shape(), std::move(out), {a, b}, [log_1mx = std::move(log_1mx)](const Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.value.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double av = pa.value[i], bv = pb.value[i], lx = log_1mx[i];
      const double t = lx / bv;
      const double w = std::exp(t);
      const double v = -std::expm1(t);
      if (pa.requires_grad) pa.grad_buffer()[i] += self.grad[i] * (-std::log(v) / (av * av));
      if (pb.requires_grad) pb.grad_buffer()[i] += self.grad[i] * (w * lx / (av * v * bv * bv));
    }
  });
}

Tensor sample_binary_concrete(const Tensor& logit, double lambda, std::span<const double> u) {
  if (!(lambda > 0.0)) throw ContractError("sample_binary_concrete: lambda must be positive");
  if (u.size() != logit.numel()) throw ShapeError("sample_binary_concrete: noise size does not match logits");
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!in_open_unit(u[i])) throw DomainError("sample_binary_concrete: U must lie in (0,1)");
    out[i] = relaxed((logit.at(i) + std::log(u[i]) - std::log1p(-u[i])) / lambda);
  }
  return make_result(logit.shape(), std::move(out), {logit}, [lambda](const Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double z = self.value[i];
      g[i] += self.grad[i] * z * (1.0 - z) / lambda;
    }
  });
}

}  // namespace sbgru
