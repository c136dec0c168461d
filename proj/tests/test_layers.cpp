#include <doctest.h>

#include <cmath>

#include "sbgru/compression.hpp"
#include "sbgru/errors.hpp"
#include "sbgru/layers.hpp"
#include "test_util.hpp"

using namespace sbgru;
using sbgru::testing::grad_check;
using sbgru::testing::random_tensor;
using sbgru::testing::weighted_sum;

namespace {

void fill(Tensor& t, double v) {
  for (double& x : t.mutable_data()) x = v;
}

/// 1-input, 1-unit cell with every weight and bias zero.
SBGRUCell zero_cell(LayerKind kind) {
  RngStream rng(0);
  SBGRUCell c = SBGRUCell::create(1, 1, kind, rng);
  for (Tensor* t : {&c.w_m, &c.b_m, &c.w_r, &c.b_r, &c.candidate.mu, &c.b_y}) fill(*t, 0.0);
  return c;
}

}  // namespace

TEST_SUITE("sb-layers") {
  TEST_CASE("stick_probs examples") {
    CHECK(stick_probs(std::vector<double>{1, 1, 1}) == std::vector<double>{1, 1, 1});
    const auto p = stick_probs(std::vector<double>{0.9, 0.5, 0.2});
    CHECK(p[0] == 0.9);
    CHECK(p[1] == doctest::Approx(0.45).epsilon(1e-15));
    CHECK(p[2] == doctest::Approx(0.09).epsilon(1e-15));
  }

  TEST_CASE("stick_probs is nonincreasing and starts at u_1") {
    RngStream rng(4);
    for (int trial = 0; trial < 10000; ++trial) {
      std::vector<double> u(1 + rng.below(12));
      for (double& x : u) x = rng.uniform();
      const auto p = stick_probs(u);
      CHECK(p[0] == u[0]);
      for (std::size_t k = 1; k < p.size(); ++k) REQUIRE(p[k] <= p[k - 1]);
    }
  }

  TEST_CASE("tape stick log-probs match the scalar products") {
    const std::vector<double> u{0.9, 0.5, 0.2};
    std::vector<double> lu;
    for (double x : u) lu.push_back(std::log(x));
    const Tensor lp = stick_log_probs(Tensor::from({3}, lu));
    const auto p = stick_probs(u);
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::exp(lp.at(k)) == doctest::Approx(p[k]).epsilon(1e-14));
  }

  TEST_CASE("sb_dense_forward examples") {
    RngStream rng(1);
    const Tensor x = random_tensor({2, 3}, rng, -1, 1, false);
    const Tensor w = random_tensor({3, 4}, rng, -1, 1, false);
    const Tensor b = random_tensor({4}, rng, -1, 1, false);
    const Tensor ones = Tensor::full({3, 4}, 1.0);
    CHECK(sb_dense_forward(x, w, ones, b, Activation::tanh).value() ==
          tanh(add_row(matmul(x, w), b)).value());
    const Tensor none = sb_dense_forward(x, w, Tensor::zeros({3, 4}), b, Activation::tanh);
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t k = 0; k < 4; ++k) CHECK(none.at(r, k) == std::tanh(b.at(k)));
    // y_k = Σ_j w_jk z_jk x_j: column 0 keeps w_00 = 1, column 1 keeps w_11 = 1.
    // The elementwise mask gives [1, 1]; [2, 1] would need the matrix product W·Z.
    const Tensor y = sb_dense_forward(Tensor::from({1, 2}, {1, 1}), Tensor::from({2, 2}, {1, 0, 0, 1}),
                                      Tensor::from({2, 2}, {1, 0, 1, 1}), Tensor::zeros({2}), Activation::identity);
    CHECK(y.value() == std::vector<double>{1, 1});
    CHECK_THROWS_AS(sb_dense_forward(x, Tensor::zeros({2, 4}), Tensor::zeros({2, 4}), b, Activation::identity),
                    ShapeError);
  }

  TEST_CASE("gru_step examples") {
    SBGRUCell c = zero_cell(LayerKind::plain);
    const Tensor y = gru_step(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {1.0}), c);
    CHECK(y.item() == 0.5);

    RngStream rng(2);
    SBGRUCell g = SBGRUCell::create(3, 4, LayerKind::plain, rng);
    const Tensor x = random_tensor({2, 3}, rng, -1, 1, false);
    const Tensor yp = random_tensor({2, 4}, rng, -1, 1, false);
    fill(g.b_m, 40.0);
    const Tensor cand = tanh(add_row(matmul(concat_cols(mul(sigmoid(add_row(matmul(concat_cols(yp, x), g.w_r), g.b_r)), yp), x),
                                            g.candidate.mu),
                                     g.b_y));
    const Tensor up = gru_step(x, yp, g);
    for (std::size_t i = 0; i < up.numel(); ++i) CHECK(up.at(i) == doctest::Approx(cand.at(i)).epsilon(1e-12));
    fill(g.b_m, -40.0);
    const Tensor keep = gru_step(x, yp, g);
    for (std::size_t i = 0; i < keep.numel(); ++i) CHECK(keep.at(i) == doctest::Approx(yp.at(i)).epsilon(1e-12));
  }

  TEST_CASE("sbgru_step with a relaxed mask, by hand") {
    // Gates zero ⇒ m = r = 0.5; candidate input [0.5·1, 0], W ⊙ Z = 0.5
    // ⇒ ỹ = tanh(0.25), y = 0.5 + 0.5·tanh(0.25).
    SBGRUCell c = zero_cell(LayerKind::sb);
    const Tensor w = Tensor::from({2, 1}, {1.0, 1.0});
    const Tensor z = Tensor::from({2, 1}, {0.5, 0.5});
    const Tensor y = sbgru_step(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {1.0}), c, mul(w, z));
    CHECK(y.item() == doctest::Approx(0.62245933120185456).epsilon(1e-15));
    // Fully pruned candidate path: ỹ = tanh(b_y).
    fill(c.b_y, 0.3);
    const Tensor y0 = sbgru_step(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {1.0}), c, mul(w, Tensor::zeros({2, 1})));
    CHECK(y0.item() == doctest::Approx(0.5 + 0.5 * std::tanh(0.3)).epsilon(1e-15));
  }

  TEST_CASE("plain kind reduces to gru_step bitwise") {
    RngStream rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      SBGRUCell plain = SBGRUCell::create(3, 5, LayerKind::plain, rng);
      SBGRUCell sb = SBGRUCell::create(3, 5, LayerKind::sb, rng);
      const Tensor x = random_tensor({2, 3}, rng, -2, 2, false);
      const Tensor yp = random_tensor({2, 5}, rng, -1, 1, false);
      RngStream noise(trial);
      const LayerNoise n = sample_layer_noise(plain, noise, 0.5, NoiseMode::train, 0.0);
      CHECK(sbgru_step(x, yp, plain, n.candidate_weight()).value() == gru_step(x, yp, plain).value());
      const Tensor masked = mul(sb.candidate.mu, Tensor::full(sb.candidate.mu.shape(), 1.0));
      CHECK(sbgru_step(x, yp, sb, masked).value() == gru_step(x, yp, sb).value());
    }
  }

  TEST_CASE("a zeroed mask entry detaches its weight") {
    RngStream rng(9);
    SBGRUCell c = SBGRUCell::create(2, 3, LayerKind::sb, rng);
    const Tensor x = random_tensor({1, 2}, rng, -1, 1, false);
    const Tensor yp = random_tensor({1, 3}, rng, -1, 1, false);
    std::vector<double> zv(15, 1.0);
    zv[7] = 0.0;
    const Tensor z = Tensor::from({5, 3}, zv);
    const auto before = sbgru_step(x, yp, c, mul(c.candidate.mu, z)).value();
    c.candidate.mu.mutable_data()[7] += 123.0;
    CHECK(sbgru_step(x, yp, c, mul(c.candidate.mu, z)).value() == before);
  }

  TEST_CASE("sample_layer_noise examples") {
    RngStream rng(10);
    SBGRUCell plain = SBGRUCell::create(2, 3, LayerKind::plain, rng);
    const LayerNoise e = sample_layer_noise(plain, rng, 1.0, NoiseMode::eval, 0.01);
    CHECK(e.weight.value() == plain.candidate.mu.value());
    CHECK_FALSE(e.mask.defined());
    CHECK_FALSE(e.log_u.defined());

    SBGRUCell sb = SBGRUCell::create(2, 3, LayerKind::sb, rng);
    fill(sb.candidate.rho, -60.0);          // σ ≈ e^-60
    fill(sb.indicators.logit_pi, 40.0);     // π̃ ≈ 1
    const LayerNoise t = sample_layer_noise(sb, rng, 0.5, NoiseMode::train, 0.0);
    for (std::size_t i = 0; i < t.weight.numel(); ++i) {
      CHECK(t.weight.at(i) == doctest::Approx(sb.candidate.mu.at(i)).epsilon(1e-12));
      CHECK(t.mask.at(i) > 1.0 - 1e-9);
    }
    CHECK(t.log_u.numel() == 3);

    RngStream r1(77), r2(77);
    const LayerNoise a = sample_layer_noise(sb, r1, 0.5, NoiseMode::train, 0.0);
    const LayerNoise b = sample_layer_noise(sb, r2, 0.5, NoiseMode::train, 0.0);
    CHECK(a.weight.value() == b.weight.value());
    CHECK(a.mask.value() == b.mask.value());
    CHECK(a.log_u.value() == b.log_u.value());
    CHECK_THROWS_AS(sample_layer_noise(sb, r1, 0.0, NoiseMode::train, 0.0), ContractError);
  }

  TEST_CASE("kinds control which posteriors are sampled") {
    RngStream rng(12);
    for (LayerKind k : {LayerKind::plain, LayerKind::repar, LayerKind::bp, LayerKind::sb}) {
      SBGRUCell c = SBGRUCell::create(2, 3, k, rng);
      const LayerNoise n = sample_layer_noise(c, rng, 0.5, NoiseMode::train, 0.0);
      CHECK((n.weight.value() != c.candidate.mu.value()) == has_gaussian(k));
      CHECK(n.mask.defined() == has_indicators(k));
      CHECK(n.log_u.defined() == has_indicators(k));
    }
    CHECK(parse_layer_kind("sb") == LayerKind::sb);
    CHECK_THROWS(parse_layer_kind("lstm"));
  }

  TEST_CASE("initial sparsity at tau 0.01 is below 1%") {
    RngStream rng(13);
    SBGRUCell c = SBGRUCell::create(64, 64, LayerKind::sb, rng);
    const auto mask = prune_mask(c.indicators.pi_tilde().value(), 0.01);
    const auto kept = std::count(mask.begin(), mask.end(), 1);
    CHECK(1.0 - static_cast<double>(kept) / mask.size() < 0.01);
    CHECK(c.indicators.pi_tilde().at(0) == doctest::Approx(0.95257).epsilon(1e-5));
    const auto profile = expected_stick_profile(c);
    for (std::size_t k = 1; k < profile.size(); ++k) CHECK(profile[k] <= profile[k - 1]);
  }

  TEST_CASE("sbgru_step gradients with frozen noise") {
    RngStream rng(14);
    SBGRUCell c = SBGRUCell::create(3, 2, LayerKind::sb, rng);
    // Move away from the initial constants so every entry has its own gradient.
    for (auto& [n, t] : c.parameters())
      for (double& v : t->mutable_data()) v += 0.3 * (2.0 * rng.uniform() - 1.0);
    const Tensor x = random_tensor({2, 3}, rng, -1, 1, false);
    const Tensor yp = random_tensor({2, 2}, rng, -1, 1, false);
    RngStream nrng(5);
    const NoiseDraws d = draw_noise(c, nrng);
    auto f = [&] {
      const LayerNoise n = realize_noise(c, d, 0.7, NoiseMode::train, 0.0);
      // Sticks do not enter the step; tie them in through the log draws.
      return add(weighted_sum(sbgru_step(x, yp, c, n.candidate_weight())), weighted_sum(exp(n.log_u), 3));
    };
    CHECK_GRADS(grad_check(c.parameters(), f));
  }
}
