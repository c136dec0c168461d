#include "sbgru/compression.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "sbgru/errors.hpp"
#include "sbgru/metrics.hpp"

namespace sbgru {

std::vector<std::uint8_t> prune_mask(std::span<const double> pi_tilde, double tau) {
  std::vector<std::uint8_t> mask(pi_tilde.size());
  for (std::size_t i = 0; i < pi_tilde.size(); ++i) mask[i] = pi_tilde[i] >= tau ? 1 : 0;
  return mask;
}

DeltaMode parse_delta_mode(std::string_view text) {
  if (text == "mean-sigma") return DeltaMode::mean_sigma;
  if (text == "mean-var") return DeltaMode::mean_var;
  if (text == "fixed") return DeltaMode::fixed;
  throw ContractError("unknown delta mode '" + std::string(text) + "' (expected mean-sigma|mean-var)");
}

std::string_view to_string(DeltaMode mode) {
  switch (mode) {
    case DeltaMode::mean_sigma: return "mean-sigma";
    case DeltaMode::mean_var: return "mean-var";
    case DeltaMode::fixed: return "fixed";
  }
  return "?";
}

double grid_step(std::span<const double> sigma, DeltaMode mode, double fixed_delta) {
  if (mode == DeltaMode::fixed) {
    if (!(fixed_delta > 0.0)) throw ContractError("fixed delta must be positive");
    return fixed_delta;
  }
  if (sigma.empty()) throw ContractError("grid_step: no posterior scales");
  double s = 0.0;
  for (double v : sigma) {
    if (!(v > 0.0)) throw ContractError("quantize_weights: sigma must be positive");
    s += mode == DeltaMode::mean_var ? v * v : v;
  }
  return s / static_cast<double>(sigma.size());
}

QuantizedTensor quantize_weights(std::span<const double> mu, double delta) {
  if (!(delta > 0.0)) throw ContractError("quantize_weights: delta must be positive");
  if (mu.empty()) throw ContractError("quantize_weights: empty tensor");
  QuantizedTensor q;
  q.delta = delta;
  q.indices.resize(mu.size());
  q.values.resize(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    q.indices[i] = std::llround(mu[i] / delta);
    q.values[i] = static_cast<double>(q.indices[i]) * delta;
  }
  const auto [lo, hi] = std::minmax_element(mu.begin(), mu.end());
  q.min_index = *std::min_element(q.indices.begin(), q.indices.end());
  const double levels = std::ceil(std::log2((*hi - *lo) / delta + 1.0));
  q.bits = std::max(1, static_cast<int>(levels));
  const auto span = static_cast<std::uint64_t>(*std::max_element(q.indices.begin(), q.indices.end()) - q.min_index);
  // Guards log2 rounding at exact powers of two.
  while (q.bits < 62 && (span >> q.bits) != 0) ++q.bits;
  return q;
}

QuantizedTensor quantize_weights(std::span<const double> mu, std::span<const double> sigma, DeltaMode mode,
                                 double fixed_delta) {
  if (mode != DeltaMode::fixed && sigma.size() != mu.size())
    throw ShapeError("quantize_weights: mu and sigma differ in size");
  return quantize_weights(mu, grid_step(sigma, mode, fixed_delta));
}

double CompressionReport::compression_factor(int reference) const {
  double num = 0.0, den = 0.0;
  for (const auto& l : layers) {
    num += static_cast<double>(reference) * static_cast<double>(l.total);
    den += static_cast<double>(l.bits_per_weight) * static_cast<double>(l.retained);
  }
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return num / den;
}

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::string layer_name(const ModelConfig& cfg, std::size_t i) {
  return i < cfg.enc_layers ? "enc." + std::to_string(i) : "dec." + std::to_string(i - cfg.enc_layers);
}

}  // namespace

CompressResult compress(const Checkpoint& ckpt, const CompressOptions& opts) {
  if (opts.tau < 0.0 || opts.tau > 1.0) throw ContractError("tau must lie in [0, 1]");
  const ModelConfig cfg = read_model_config(ckpt);
  CompressResult res;
  res.report.tau = opts.tau;
  res.report.reference_bits = opts.reference_bits;
  const bool already = ckpt.meta("compression.tau").has_value();
  if (already) {
    res.report.tau = std::stod(*ckpt.meta("compression.tau"));
    res.report.reference_bits = std::stoi(ckpt.meta_or("compression.reference_bits", "32"));
  }

  // Replacement records keyed by the name they take the place of.
  std::vector<std::pair<std::string, std::vector<TensorRecord>>> replace;
  std::vector<std::string> drop;
  std::vector<std::string> missing;

  for (std::size_t i = 0; i < cfg.layer_kinds.size(); ++i) {
    const LayerKind kind = cfg.layer_kinds[i];
    if (kind == LayerKind::plain) continue;
    const std::string L = layer_name(cfg, i);
    const TensorRecord* mu_rec = ckpt.find(L + ".W_y.mu");
    if (!mu_rec) {
      missing.push_back(L + ".W_y.mu");
      continue;
    }
    const std::size_t total = numel(mu_rec->shape);
    LayerCompression lc{L, kind, total, total, 32, 0.0};

    std::vector<std::uint8_t> mask;
    std::string mask_name;
    if (has_indicators(kind)) {
      mask_name = L + ".Z.mask";
      if (const TensorRecord* m = ckpt.find(mask_name)) {
        mask = decode_bitmap(*m);
      } else if (const TensorRecord* logit = ckpt.find(L + ".Z.logit")) {
        auto pi = decode_values(ckpt, *logit);
        for (double& p : pi) p = sigmoid(p);
        mask = prune_mask(pi, opts.tau);
        replace.push_back({L + ".Z.logit", {encode_bitmap(mask_name, logit->shape, mask)}});
      } else {
        missing.push_back(L + ".Z.logit");
        continue;
      }
      lc.retained = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    }

    if (mu_rec->encoding == Encoding::grid) {
      lc.bits_per_weight = mu_rec->grid.bits;
      lc.delta = mu_rec->grid.delta;
    } else if (mu_rec->encoding == Encoding::raw_f32) {
      lc.bits_per_weight = 32;
    } else if (has_gaussian(kind)) {
      const TensorRecord* rho_rec = ckpt.find(L + ".W_y.rho");
      if (!rho_rec && opts.delta_mode != DeltaMode::fixed) {
        missing.push_back(L + ".W_y.rho");
        continue;
      }
      const auto mu = decode_values(ckpt, *mu_rec);
      std::vector<double> sigma;
      if (rho_rec) {
        sigma = decode_values(ckpt, *rho_rec);
        for (double& s : sigma) s = softplus(s);
      }
      const auto q = quantize_weights(mu, sigma, opts.delta_mode, opts.fixed_delta);
      const GridParams gp{static_cast<std::uint8_t>(q.bits), q.delta, q.min_index};
      replace.push_back({mu_rec->name, {encode_grid(mu_rec->name, mu_rec->shape, gp, q.indices, mask_name, mask)}});
      if (rho_rec) drop.push_back(rho_rec->name);
      lc.bits_per_weight = q.bits;
      lc.delta = q.delta;
    } else {
      const auto mu = decode_values(ckpt, *mu_rec);
      replace.push_back({mu_rec->name, {encode_raw_f32(mu_rec->name, mu_rec->shape, mu, mask_name, mask)}});
    }
    res.report.layers.push_back(lc);
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint lacks posterior tensors:";
    for (const auto& m : missing) msg += " " + m;
    throw FormatError(msg);
  }
  if (res.report.layers.empty()) throw ContractError("checkpoint has no stochastic layers to compress");

  Checkpoint& out = res.checkpoint;
  out.version = ckpt.version;
  out.metadata = ckpt.metadata;
  if (!already) {
    out.set_meta("compression.tau", format_double(opts.tau));
    out.set_meta("compression.delta_mode", std::string(to_string(opts.delta_mode)));
    out.set_meta("compression.reference_bits", std::to_string(opts.reference_bits));
  }
  for (const auto& rec : ckpt.tensors) {
    if (rec.name.starts_with("adam.")) continue;
    if (std::find(drop.begin(), drop.end(), rec.name) != drop.end()) continue;
    auto it = std::find_if(replace.begin(), replace.end(), [&](const auto& r) { return r.first == rec.name; });
    if (it != replace.end()) {
      for (const auto& r : it->second) out.tensors.push_back(r);
    } else {
      out.tensors.push_back(rec);
    }
  }
  return res;
}

std::string format_report(const CompressionReport& report) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-8s %-6s %10s %10s %9s %5s %14s\n", "layer", "kind", "total", "retained",
                "sparsity", "bits", "delta");
  os << line;
  for (const auto& l : report.layers) {
    std::snprintf(line, sizeof line, "%-8s %-6s %10zu %10zu %9.6f %5d %14.8g\n", l.layer.c_str(),
                  std::string(to_string(l.kind)).c_str(), l.total, l.retained, l.sparsity(), l.bits_per_weight,
                  l.delta);
    os << line;
  }
  os << "tau " << format_double(report.tau) << "\n";
  std::snprintf(line, sizeof line, "compression_factor (reference %d-bit) %.6f\n", report.reference_bits,
                report.compression_factor());
  os << line;
  const int other = report.reference_bits == 16 ? 32 : 16;
  std::snprintf(line, sizeof line, "compression_factor (reference %d-bit) %.6f\n", other,
                report.compression_factor(other));
  os << line;
  return os.str();
}

CompressionEval eval_with_compression(const Checkpoint& original, const Checkpoint& compressed,
                                      const ParallelCorpus& dev) {
  CompressionEval ev;
  const auto refs = targets(dev);
  auto run = [&](const Checkpoint& c, double tau) {
    const LoadedModel lm = load_model(c);
    std::vector<std::vector<std::size_t>> srcs;
    for (const auto& p : dev.pairs) srcs.push_back(lm.src_vocab.encode(p.src));
    const auto ids = lm.model.greedy_decode_all(srcs, lm.model.config().max_decode_len, tau);
    std::vector<Sentence> hyps;
    for (const auto& s : ids) hyps.push_back(lm.tgt_vocab.decode(s));
    return hyps;
  };
  ev.hyps_before = run(original, 0.0);
  ev.hyps_after = run(compressed, 0.0);
  ev.bleu_before = bleu4(ev.hyps_before, refs);
  ev.rouge_before = corpus_rouge_l(ev.hyps_before, refs);
  ev.bleu_after = bleu4(ev.hyps_after, refs);
  ev.rouge_after = corpus_rouge_l(ev.hyps_after, refs);
  return ev;
}

}  // namespace sbgru
