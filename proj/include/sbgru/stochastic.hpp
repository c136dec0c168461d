#pragma once

// Reparameterized samplers for the three posterior families (Gaussian
// weights, Kumaraswamy sticks, relaxed Bernoulli indicators) and the
// temperature schedule for the relaxation.
//
// Scalar functions are the reference semantics; the Tensor overloads build
// the same computations on the tape with the noise supplied as constants.

#include <cstdint>
#include <span>

#include "sbgru/tensor.hpp"

namespace sbgru {

inline constexpr double kUniformEps = 1e-7;

/// Clamp a uniform draw into [1e-7, 1 - 1e-7] before it meets a log.
double clamp_uniform(double u);

double sample_gaussian(double mu, double sigma, double eps);

/// u = (1 - (1-X)^(1/b))^(1/a)
double sample_kumaraswamy(double a, double b, double x);

/// log a + log b + (a-1) log u + (b-1) log(1 - u^a)
double kumaraswamy_log_pdf(double u, double a, double b);

/// Mean of Kumaraswamy(a, b): b · B(1 + 1/a, b).
double kumaraswamy_mean(double a, double b);

/// sigmoid((log_alpha + log U - log(1-U)) / lambda)
double sample_binary_concrete(double log_alpha, double lambda, double u);

struct TemperatureSchedule {
  double lambda0 = 1.0;
  double lambda_min = 0.5;
  double decay_rate = 1e-4;
  std::uint64_t update_every = 100;
};

/// max(lambda_min, lambda0 · exp(-decay_rate · floor(step/update_every) · update_every))
double temperature(std::uint64_t step, const TemperatureSchedule& sched);

// ---- tape versions ----------------------------------------------------------

/// mu + sigma ⊙ eps, differentiable in mu and sigma.
Tensor sample_gaussian(const Tensor& mu, const Tensor& sigma, std::span<const double> eps);

/// log of a Kumaraswamy draw, differentiable in a and b. Working in log space
/// keeps tiny sticks representable; exp() of the result is the draw itself.
Tensor kumaraswamy_log_sample(const Tensor& a, const Tensor& b, std::span<const double> x);

/// Relaxed Bernoulli sample with the logit as log_alpha.
Tensor sample_binary_concrete(const Tensor& logit, double lambda, std::span<const double> u);

}  // namespace sbgru
