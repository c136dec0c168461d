#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sbgru/rng.hpp"
#include "sbgru/tensor.hpp"

namespace sbgru::testing {

inline Tensor random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0, bool grad = true) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor::from(std::move(shape), std::move(v), grad);
}

/// Reduce any tensor to a scalar with fixed random weights so every output
/// entry contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  RngStream rng(seed);
  return sum(mul(t, random_tensor(t.shape(), rng, -1.0, 1.0, false)));
}

struct GradCheckResult {
  double worst_rel = 0.0;
  std::string worst_where;
  bool ok = true;
};

/// Central differences with step h against the tape gradient of `loss()`.
/// An entry passes when |analytic − numeric| ≤ rtol·max(|analytic|, |numeric|) + atol.
inline GradCheckResult grad_check(const std::vector<std::pair<std::string, Tensor*>>& leaves,
                                  const std::function<Tensor()>& loss, double h = 1e-4, double rtol = 1e-4,
                                  double atol = 1e-8) {
  for (auto& [n, t] : leaves) t->zero_grad();
  backward(loss());
  GradCheckResult res;
  for (auto& [name, t] : leaves) {
    const std::vector<double> analytic =
        t->has_grad() ? std::vector<double>(t->grad().begin(), t->grad().end()) : std::vector<double>(t->numel(), 0.0);
    auto data = t->mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double fp, fm;
      {
        NoGradGuard g;
        data[i] = orig + h;
        fp = loss().item();
        data[i] = orig - h;
        fm = loss().item();
        data[i] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric);
      const double bound = rtol * std::max(std::abs(analytic[i]), std::abs(numeric)) + atol;
      const double rel = err / (std::max(std::abs(analytic[i]), std::abs(numeric)) + 1e-300);
      if (err > bound) {
        res.ok = false;
        if (rel > res.worst_rel || res.worst_where.empty()) {
          res.worst_rel = rel;
          res.worst_where = name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic[i]) +
                            " numeric " + std::to_string(numeric);
        }
      }
    }
  }
  return res;
}

#define CHECK_GRADS(result)                       \
  do {                                            \
    const auto _r = (result);                     \
    INFO("worst: " << _r.worst_where);            \
    CHECK(_r.ok);                                 \
  } while (0)

}  // namespace sbgru::testing
