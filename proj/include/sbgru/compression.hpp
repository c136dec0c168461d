#pragma once

// Inference-time compression of stochastic layers.
//
// Connections whose indicator posterior falls below the cut-off τ are pruned.
// Surviving candidate weights are snapped to a grid whose step δ comes from
// the posterior spread (mean σ by default): uncertain weights do not need more
// resolution than their own noise. The grid bit width follows from the weight
// range measured in steps.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sbgru/checkpoint.hpp"
#include "sbgru/corpus.hpp"

namespace sbgru {

inline constexpr double kDefaultTau = 0.01;

/// mask[i] = 1 iff pi_tilde[i] ≥ tau.
std::vector<std::uint8_t> prune_mask(std::span<const double> pi_tilde, double tau);

enum class DeltaMode { mean_sigma, mean_var, fixed };

DeltaMode parse_delta_mode(std::string_view text);
std::string_view to_string(DeltaMode mode);

struct QuantizedTensor {
  std::vector<double> values;         // round(mu/δ)·δ
  std::vector<std::int64_t> indices;  // round(mu/δ)
  std::int64_t min_index = 0;
  int bits = 1;
  double delta = 0.0;
};

/// Grid step for the given posterior scales.
double grid_step(std::span<const double> sigma, DeltaMode mode, double fixed_delta = 0.0);

/// bits = max(1, ceil(log2((max(mu) − min(mu))/δ + 1)))
QuantizedTensor quantize_weights(std::span<const double> mu, double delta);
QuantizedTensor quantize_weights(std::span<const double> mu, std::span<const double> sigma,
                                 DeltaMode mode = DeltaMode::mean_sigma, double fixed_delta = 0.0);

struct LayerCompression {
  std::string layer;
  LayerKind kind = LayerKind::plain;
  std::size_t total = 0;
  std::size_t retained = 0;
  int bits_per_weight = 32;
  double delta = 0.0;  // zero when the weights are stored unquantized

  double sparsity() const { return total ? 1.0 - static_cast<double>(retained) / static_cast<double>(total) : 0.0; }
};

struct CompressionReport {
  std::vector<LayerCompression> layers;
  double tau = kDefaultTau;
  int reference_bits = 32;

  /// Σ reference_bits·total / Σ bits·retained over the compressed layers.
  double compression_factor() const { return compression_factor(reference_bits); }
  double compression_factor(int reference) const;
};

struct CompressOptions {
  double tau = kDefaultTau;
  DeltaMode delta_mode = DeltaMode::mean_sigma;
  double fixed_delta = 0.0;  // used with DeltaMode::fixed
  int reference_bits = 32;
};

struct CompressResult {
  Checkpoint checkpoint;
  CompressionReport report;
};

/// Plain layers, gates, embeddings and the projection pass through byte for
/// byte; optimizer state is dropped. Layers that are already compressed are
/// kept as they are, so compressing twice is a no-op.
CompressResult compress(const Checkpoint& ckpt, const CompressOptions& opts = {});

/// Per-layer table and global factors (32- and 16-bit references).
std::string format_report(const CompressionReport& report);

struct CompressionEval {
  double bleu_before = 0.0;
  double rouge_before = 0.0;
  double bleu_after = 0.0;
  double rouge_after = 0.0;
  std::vector<Sentence> hyps_before;
  std::vector<Sentence> hyps_after;
};

/// Decode `dev` with the original posterior means (nothing pruned) and with
/// the compressed weights.
CompressionEval eval_with_compression(const Checkpoint& original, const Checkpoint& compressed,
                                      const ParallelCorpus& dev);

}  // namespace sbgru
