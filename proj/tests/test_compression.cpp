#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fixtures.hpp"
#include "sbgru/compression.hpp"
#include "sbgru/errors.hpp"

using namespace sbgru;
using sbgru::testing::jitter;
using sbgru::testing::tiny_config;

namespace {

Vocab tiny_vocab() { return Vocab::from_tokens({"<pad>", "<s>", "</s>", "<unk>", "x"}); }

/// Jittered model whose indicator logits span [-6, 6].
Checkpoint toy_checkpoint(LayerKind enc, LayerKind dec, std::uint64_t seed = 1) {
  RngStream init(seed);
  Seq2SeqModel m(tiny_config(enc, dec), init);
  jitter(m, seed + 50);
  RngStream rng(seed + 99);
  for (auto& [name, t] : m.parameters())
    if (name.ends_with(".Z.logit"))
      for (double& v : t->mutable_data()) v = -6.0 + 12.0 * rng.uniform();
  return make_checkpoint(m, tiny_vocab(), tiny_vocab(), {}, {{"adam.m.enc.0.W_y.mu", {0.0}}});
}

std::vector<double> tensor_values(const Checkpoint& c, const std::string& name) {
  const TensorRecord* r = c.find(name);
  REQUIRE(r != nullptr);
  return decode_values(c, *r);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_SUITE("compression") {
  TEST_CASE("prune_mask examples") {
    const std::vector<double> pi{0.9, 0.01, 0.5, 0.6};
    CHECK(prune_mask(pi, 0.5) == std::vector<std::uint8_t>{1, 0, 1, 1});
    CHECK(prune_mask(pi, 0.0) == std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(prune_mask(pi, 0.95) == std::vector<std::uint8_t>{0, 0, 0, 0});
  }

  TEST_CASE("sparsity is monotone in tau") {
    RngStream rng(1);
    std::vector<double> pi(500);
    for (double& p : pi) p = rng.uniform();
    std::size_t prev = pi.size();
    for (double tau : {0.0, 0.01, 0.1, 0.5, 0.9}) {
      const auto m = prune_mask(pi, tau);
      const auto kept = static_cast<std::size_t>(std::count(m.begin(), m.end(), 1));
      CHECK(kept <= prev);
      prev = kept;
    }
  }

  TEST_CASE("quantize_weights examples") {
    const std::vector<double> mu{0.3, -1.0, 0.6};
    const auto q = quantize_weights(mu, 0.25);
    CHECK(q.values[0] == 0.25);
    CHECK(q.indices == std::vector<std::int64_t>{1, -4, 2});
    CHECK(q.min_index == -4);
    // range 1.6 / 0.25 + 1 = 7.4 levels → 3 bits
    CHECK(q.bits == 3);
    CHECK(quantize_weights(mu, 5.0).bits == 1);
    CHECK(quantize_weights(std::vector<double>{0.4, 0.4}, 1e3).bits == 1);
    const std::vector<double> sigma{0.1, 0.2, 0.3};
    CHECK(quantize_weights(mu, sigma).delta == doctest::Approx(0.2).epsilon(1e-15));
    CHECK(quantize_weights(mu, sigma, DeltaMode::mean_var).delta == doctest::Approx(0.14 / 3.0).epsilon(1e-14));
    CHECK(quantize_weights(mu, {}, DeltaMode::fixed, 0.5).delta == 0.5);
    CHECK_THROWS_AS(quantize_weights(mu, std::vector<double>{0.1, 0.0, 0.3}), ContractError);
    CHECK_THROWS_AS(quantize_weights(mu, 0.0), ContractError);
  }

  TEST_CASE("quantization error is at most delta/2 and indices fit") {
    RngStream rng(2);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<double> mu(64);
      for (double& v : mu) v = 4.0 * rng.normal();
      const double delta = std::exp(-8.0 + 10.0 * rng.uniform());
      const auto q = quantize_weights(mu, delta);
      std::int64_t hi = q.min_index;
      for (std::size_t i = 0; i < mu.size(); ++i) {
        CHECK(std::abs(q.values[i] - mu[i]) <= delta / 2 * (1 + 1e-12));
        hi = std::max(hi, q.indices[i]);
      }
      CHECK(static_cast<std::uint64_t>(hi - q.min_index) < (std::uint64_t{1} << q.bits));
      CHECK(q.bits >= 1);
    }
  }

  TEST_CASE("compress: pruning, grid storage and decode bound") {
    const Checkpoint c = toy_checkpoint(LayerKind::sb, LayerKind::sb);
    const auto res = compress(c, {});
    REQUIRE(res.report.layers.size() == 2);
    for (const auto& l : res.report.layers) {
      CHECK(l.retained <= l.total);
      CHECK(l.bits_per_weight >= 1);
      const auto logits = tensor_values(c, l.layer + ".Z.logit");
      std::size_t kept = 0;
      for (double x : logits) kept += sigmoid(x) >= kDefaultTau;
      CHECK(l.retained == kept);

      const auto mask = decode_bitmap(*res.checkpoint.find(l.layer + ".Z.mask"));
      const auto before = tensor_values(c, l.layer + ".W_y.mu");
      const auto after = tensor_values(res.checkpoint, l.layer + ".W_y.mu");
      for (std::size_t i = 0; i < before.size(); ++i) {
        if (mask[i])
          CHECK(std::abs(after[i] - before[i]) <= l.delta / 2 * (1 + 1e-12));
        else
          CHECK(after[i] == 0.0);
      }
      CHECK(res.checkpoint.find(l.layer + ".Z.logit") == nullptr);
      CHECK(res.checkpoint.find(l.layer + ".W_y.rho") == nullptr);
    }
    CHECK(res.checkpoint.find("adam.m.enc.0.W_y.mu") == nullptr);
    CHECK(deserialize(serialize(res.checkpoint)) == res.checkpoint);
  }

  TEST_CASE("compress is idempotent") {
    const Checkpoint c = toy_checkpoint(LayerKind::sb, LayerKind::repar);
    const auto once = compress(c, {0.05});
    const auto twice = compress(once.checkpoint, {0.5});
    CHECK(serialize(twice.checkpoint) == serialize(once.checkpoint));
    CHECK(format_report(twice.report) == format_report(once.report));
  }

  TEST_CASE("plain layers and shared tensors pass through bit-identical") {
    const Checkpoint c = toy_checkpoint(LayerKind::plain, LayerKind::sb);
    const auto res = compress(c, {});
    REQUIRE(res.report.layers.size() == 1);
    CHECK(res.report.layers[0].layer == "dec.0");
    for (const auto& rec : c.tensors) {
      if (rec.name.starts_with("dec.0.W_y.") || rec.name.starts_with("dec.0.Z.") || rec.name.starts_with("adam."))
        continue;
      const TensorRecord* out = res.checkpoint.find(rec.name);
      REQUIRE(out != nullptr);
      CHECK(*out == rec);
    }
  }

  TEST_CASE("layer kinds without indicators or without variances") {
    const auto rp = compress(toy_checkpoint(LayerKind::repar, LayerKind::repar), {0.5});
    for (const auto& l : rp.report.layers) {
      CHECK(l.retained == l.total);
      CHECK(l.delta > 0.0);
    }
    const auto bp = compress(toy_checkpoint(LayerKind::bp, LayerKind::bp), {0.5});
    for (const auto& l : bp.report.layers) {
      CHECK(l.bits_per_weight == 32);
      CHECK(l.delta == 0.0);
      CHECK(bp.checkpoint.find(l.layer + ".W_y.mu")->encoding == Encoding::raw_f32);
    }
  }

  TEST_CASE("missing posterior tensors are named") {
    Checkpoint c = toy_checkpoint(LayerKind::sb, LayerKind::sb);
    std::erase_if(c.tensors, [](const TensorRecord& r) { return r.name == "enc.0.Z.logit" || r.name == "dec.0.W_y.rho"; });
    try {
      compress(c, {});
      FAIL("expected a format error");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("enc.0.Z.logit") != std::string::npos);
      CHECK(msg.find("dec.0.W_y.rho") != std::string::npos);
    }
    CHECK_THROWS_AS(compress(toy_checkpoint(LayerKind::plain, LayerKind::plain), {}), ContractError);
  }

  TEST_CASE("full pruning leaves only the candidate bias path") {
    const auto res = compress(toy_checkpoint(LayerKind::sb, LayerKind::sb), {1.0});
    for (const auto& l : res.report.layers) CHECK(l.retained == 0);
    const LoadedModel lm = load_model(res.checkpoint);
    const ForwardContext ctx = lm.model.eval_context(0.0);
    for (const LayerNoise& n : ctx.layer_noise) {
      const Tensor w = n.candidate_weight();
      for (double v : w.value()) CHECK(v == 0.0);
    }
  }

  TEST_CASE("lossless limit: tau 0 and tiny delta") {
    const Checkpoint c = toy_checkpoint(LayerKind::sb, LayerKind::sb);
    CompressOptions o;
    o.tau = 0.0;
    o.delta_mode = DeltaMode::fixed;
    o.fixed_delta = 1e-12;
    const auto res = compress(c, o);
    for (const auto& l : res.report.layers) {
      CHECK(l.retained == l.total);
      const auto before = tensor_values(c, l.layer + ".W_y.mu");
      const auto after = tensor_values(res.checkpoint, l.layer + ".W_y.mu");
      for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(after[i] - before[i]) <= 0.5e-12 * (1 + 1e-9));
    }
    // Nothing is pruned, so the factor is just the reference width over the grid width.
    const auto& l0 = res.report.layers[0];
    CHECK(res.report.compression_factor() <= 32.0 / std::min(l0.bits_per_weight, res.report.layers[1].bits_per_weight));

    const ParallelCorpus dev = parse_corpus("x\tx\nx x\tx x\nx x x\tx\n", "mem");
    const auto ev = eval_with_compression(c, res.checkpoint, dev);
    CHECK(ev.hyps_before == ev.hyps_after);
    CHECK(ev.bleu_before == ev.bleu_after);
    CHECK(ev.rouge_before == ev.rouge_after);
  }

  TEST_CASE("printed factor recomputes from the printed table") {
    const auto res = compress(toy_checkpoint(LayerKind::sb, LayerKind::sb, 7), {});
    std::istringstream in(format_report(res.report));
    std::string line;
    std::getline(in, line);  // header
    double num = 0.0, den = 0.0;
    std::string printed32, printed16;
    while (std::getline(in, line)) {
      std::istringstream f(line);
      std::string layer, kind;
      std::size_t total, retained;
      double sparsity, delta;
      int bits;
      if (line.starts_with("compression_factor (reference 32-bit)")) {
        printed32 = line.substr(line.rfind(' ') + 1);
      } else if (line.starts_with("compression_factor (reference 16-bit)")) {
        printed16 = line.substr(line.rfind(' ') + 1);
      } else if (!line.starts_with("tau") && (f >> layer >> kind >> total >> retained >> sparsity >> bits >> delta)) {
        num += static_cast<double>(total);
        den += static_cast<double>(bits) * static_cast<double>(retained);
      }
    }
    REQUIRE(den > 0.0);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", 32.0 * num / den);
    CHECK(printed32 == buf);
    std::snprintf(buf, sizeof buf, "%.6f", 16.0 * num / den);
    CHECK(printed16 == buf);
  }

  TEST_CASE("delta mode parsing") {
    CHECK(parse_delta_mode("mean-sigma") == DeltaMode::mean_sigma);
    CHECK(parse_delta_mode("mean-var") == DeltaMode::mean_var);
    CHECK(parse_delta_mode("fixed") == DeltaMode::fixed);
    CHECK_THROWS(parse_delta_mode("median"));
  }
}
