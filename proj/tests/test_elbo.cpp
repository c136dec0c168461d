#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "sbgru/elbo.hpp"
#include "sbgru/errors.hpp"
#include "test_util.hpp"

using namespace sbgru;
using sbgru::testing::grad_check;
using sbgru::testing::jitter;
using sbgru::testing::random_tensor;
using sbgru::testing::tiny_batch;
using sbgru::testing::tiny_config;

using sbgru::testing::kl_kumaraswamy_beta_quadrature;

TEST_SUITE("elbo") {
  TEST_CASE("kl_gaussian examples") {
    CHECK(kl_gaussian(std::vector<double>{0.0}, std::vector<double>{1.0}) == 0.0);
    CHECK(std::abs(kl_gaussian(std::vector<double>{1.0}, std::vector<double>{1.0}) - 0.5) <= 1e-9);
    CHECK(kl_gaussian(std::vector<double>{0.0}, std::vector<double>{std::sqrt(2.0)}) ==
          doctest::Approx(0.15343).epsilon(1e-5));
    CHECK_THROWS(kl_gaussian(std::vector<double>{0.0}, std::vector<double>{0.0}));
  }

  TEST_CASE("kl_gaussian is positive away from the prior") {
    RngStream rng(3);
    for (int i = 0; i < 200; ++i) {
      const double mu = 2.0 * rng.uniform() - 1.0, s = 0.1 + 2.0 * rng.uniform();
      CHECK(kl_gaussian(std::vector<double>{mu}, std::vector<double>{s}) > 0.0);
    }
  }

  TEST_CASE("kl_sticks_mc examples") {
    RngStream rng(4);
    for (int i = 0; i < 50; ++i) {
      const double u = rng.uniform();
      CHECK(kl_sticks_mc(std::vector<double>{1}, std::vector<double>{1}, 1.0, std::vector<double>{u}) == 0.0);
    }
    CHECK(kl_sticks_mc(std::vector<double>{2}, std::vector<double>{1}, 1.0, std::vector<double>{0.5}) ==
          doctest::Approx(0.0).epsilon(1e-15));
  }

  TEST_CASE("kl_sticks_mc running mean against quadrature") {
    RngStream rng(5);
    const int n = 100000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double u = sample_kumaraswamy(2.0, 1.0, clamp_uniform(rng.uniform()));
      s += kl_sticks_mc(std::vector<double>{2}, std::vector<double>{1}, 1.0, std::vector<double>{u});
    }
    const double mc = s / n;
    const double oracle = kl_kumaraswamy_beta_quadrature(2.0, 1.0, 1.0);
    CHECK(oracle == doctest::Approx(std::log(2.0) - 0.5).epsilon(1e-6));  // ∫ 2u log 2u du
    CHECK(mc >= -0.01);
    CHECK(std::abs(mc - oracle) <= 0.01);
  }

  TEST_CASE("kl_indicators examples") {
    // π = stick_probs(u) = [0.5, 0.25]
    const std::vector<double> u{0.5, 0.5};
    CHECK(kl_indicators(std::vector<double>{0.5, 0.25, 0.5, 0.25}, u) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(kl_indicators(std::vector<double>{1.0 - 1e-7}, std::vector<double>{0.5}) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-5));
    CHECK(std::abs(kl_indicators(std::vector<double>{0.5}, std::vector<double>{0.25}) - 0.14384) <= 1e-5);
    CHECK(kl_indicators(std::vector<double>{0.3}, std::vector<double>{0.25}) > 0.0);
  }

  TEST_CASE("nll_tokens examples") {
    const std::size_t V = 7, T = 3;
    const std::vector<double> uniform(T * V, 0.0);
    const std::vector<std::size_t> tg{1, 4, 6};
    const std::vector<double> all{1, 1, 1};
    CHECK(nll_tokens(uniform, V, tg, all) == doctest::Approx(T * std::log(7.0)).epsilon(1e-14));
    std::vector<double> sharp(T * V, 0.0);
    for (std::size_t t = 0; t < T; ++t) sharp[t * V + tg[t]] = 60.0;
    CHECK(nll_tokens(sharp, V, tg, all) < 1e-20);
    CHECK(nll_tokens(uniform, V, tg, std::vector<double>{0, 0, 0}) == 0.0);
    CHECK_THROWS(nll_tokens(uniform, V, std::vector<std::size_t>{1, 9, 2}, all));
  }

  TEST_CASE("tape KL terms agree with the scalar forms") {
    RngStream rng(6);
    SBGRUCell c = SBGRUCell::create(2, 3, LayerKind::sb, rng);
    for (auto& [n, t] : c.parameters())
      for (double& v : t->mutable_data()) v += 0.5 * (2.0 * rng.uniform() - 1.0);
    const NoiseDraws d = draw_noise(c, rng);
    const LayerNoise n = realize_noise(c, d, 0.5, NoiseMode::train, 0.0);

    const auto mu = c.candidate.mu.value();
    const auto sigma = c.candidate.sigma().value();
    CHECK(kl_gaussian(c.candidate).item() == doctest::Approx(kl_gaussian(mu, sigma)).epsilon(1e-12));

    std::vector<double> u;
    for (double l : n.log_u.value()) u.push_back(std::exp(l));
    const auto a = c.sticks.a().value(), b = c.sticks.b().value();
    CHECK(kl_sticks_mc(c.sticks, n.log_u, d.stick_x).item() ==
          doctest::Approx(kl_sticks_mc(a, b, c.sticks.alpha, u)).epsilon(1e-9));
    CHECK(kl_indicators(c.indicators, n.log_u).item() ==
          doctest::Approx(kl_indicators(c.indicators.pi_tilde().value(), u)).epsilon(1e-12));
  }

  TEST_CASE("tape KL gradients") {
    RngStream rng(7);
    SBGRUCell c = SBGRUCell::create(2, 3, LayerKind::sb, rng);
    for (auto& [n, t] : c.parameters())
      for (double& v : t->mutable_data()) v += 0.5 * (2.0 * rng.uniform() - 1.0);
    const NoiseDraws d = draw_noise(c, rng);
    auto leaves = c.parameters();
    CHECK_GRADS(grad_check(leaves, [&] { return kl_gaussian(c.candidate); }));
    CHECK_GRADS(grad_check(leaves, [&] {
      const LayerNoise n = realize_noise(c, d, 0.5, NoiseMode::train, 0.0);
      return add(kl_sticks_mc(c.sticks, n.log_u, d.stick_x), kl_indicators(c.indicators, n.log_u));
    }));
    CHECK_GRADS(grad_check(leaves, [&] {
      const LayerNoise n = realize_noise(c, d, 0.5, NoiseMode::train, 0.0);
      return add(kl_gaussian_mc(c.candidate, n.weight, d.eps), kl_indicators_mc(c.indicators, n.mask, n.log_u));
    }));
  }

  TEST_CASE("elbo_loss: plain model has no KL") {
    RngStream init(1);
    Seq2SeqModel m(tiny_config(LayerKind::plain, LayerKind::plain), init);
    RngStream rng(2);
    const ElboResult r = elbo_loss(m, tiny_batch(), rng, 0, 10, TemperatureSchedule{});
    CHECK(r.parts.kl_w == 0.0);
    CHECK(r.parts.kl_z == 0.0);
    CHECK(r.parts.kl_u == 0.0);
    CHECK(r.parts.total_loss == r.parts.nll);
    CHECK(r.loss.item() == r.parts.nll);
  }

  TEST_CASE("elbo_loss: kl_scale zero is exactly the nll") {
    RngStream init(1);
    Seq2SeqModel m(tiny_config(), init);
    RngStream nr(3);
    const auto draws = m.draw_noise(nr);
    ElboOptions o;
    o.kl_scale = 0.0;
    const ElboResult r = elbo_loss(m, tiny_batch(), draws, nullptr, o);
    CHECK(r.loss.item() == r.parts.nll);
    CHECK(r.parts.kl_z > 0.0);
  }

  TEST_CASE("elbo_loss: breakdown invariants and kl_scale") {
    RngStream init(1);
    Seq2SeqModel m(tiny_config(), init);
    RngStream rng(2);
    Batch b = tiny_batch();
    const ElboResult r1 = elbo_loss(m, b, rng, 5, 40, TemperatureSchedule{});
    CHECK(r1.parts.kl_scale == 2.0 / 40.0);
    CHECK(r1.parts.kl_w >= 0.0);
    CHECK(r1.parts.kl_z >= 0.0);
    CHECK(r1.parts.total_loss ==
          doctest::Approx(r1.parts.nll + r1.parts.kl_scale * (r1.parts.kl_w + r1.parts.kl_z + r1.parts.kl_u))
              .epsilon(1e-14));
    // Same step, same stream: identical loss.
    const ElboResult r2 = elbo_loss(m, b, rng, 5, 40, TemperatureSchedule{});
    CHECK(r1.parts.total_loss == r2.parts.total_loss);
    // Doubling the batch doubles kl_scale.
    Batch bb = b;
    bb.size = 4;
    bb.src.insert(bb.src.end(), b.src.begin(), b.src.end());
    bb.src_mask.insert(bb.src_mask.end(), b.src_mask.begin(), b.src_mask.end());
    bb.tgt_in.insert(bb.tgt_in.end(), b.tgt_in.begin(), b.tgt_in.end());
    bb.tgt_out.insert(bb.tgt_out.end(), b.tgt_out.begin(), b.tgt_out.end());
    bb.tgt_weight.insert(bb.tgt_weight.end(), b.tgt_weight.begin(), b.tgt_weight.end());
    bb.pair_index = {0, 1, 2, 3};
    const ElboResult r3 = elbo_loss(m, bb, rng, 5, 40, TemperatureSchedule{});
    CHECK(r3.parts.kl_scale == 2.0 * r1.parts.kl_scale);
  }

  TEST_CASE("elbo_loss: degenerate posteriors") {
    // σ → 0, π̃ → 1, a = b = 1, α = 1: kl_u vanishes and kl_w is the closed form
    // dominated by −log σ².
    RngStream init(1);
    ModelConfig cfg = tiny_config(LayerKind::sb, LayerKind::plain);
    Seq2SeqModel m(cfg, init);
    SBGRUCell& c = m.layer(0);
    for (double& v : c.candidate.rho.mutable_data()) v = softplus_inverse(1e-6);
    for (double& v : c.indicators.logit_pi.mutable_data()) v = 30.0;
    for (double& v : c.sticks.a_raw.mutable_data()) v = softplus_inverse(1.0);
    for (double& v : c.sticks.b_raw.mutable_data()) v = softplus_inverse(1.0);
    RngStream rng(9);
    const ElboResult r = elbo_loss(m, tiny_batch(), rng, 0, 2, TemperatureSchedule{});
    CHECK(std::abs(r.parts.kl_u) < 1e-9);
    double expect = 0.0;
    for (double mu : c.candidate.mu.value()) expect += 0.5 * (mu * mu + 1e-12 - 1.0 - std::log(1e-12));
    CHECK(r.parts.kl_w == doctest::Approx(expect).epsilon(1e-9));
    CHECK(r.parts.kl_z > 0.0);
  }

  TEST_CASE("elbo_loss gradients, every parameter class") {
    RngStream init(1);
    Seq2SeqModel m(tiny_config(), init);
    jitter(m, 2);
    RngStream nr(3);
    const auto draws = m.draw_noise(nr);
    const Batch b = tiny_batch();
    ElboOptions o;
    o.kl_scale = 0.25;
    o.lambda = 0.7;
    for (KlMode mode : {KlMode::closed_form, KlMode::monte_carlo}) {
      o.kl_mode = mode;
      CHECK_GRADS(grad_check(m.parameters(), [&] { return elbo_loss(m, b, draws, nullptr, o).loss; }));
    }
  }
}
