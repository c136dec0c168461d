#pragma once

// Encoder–decoder translation network without attention. Each decoder layer
// starts from the final state of the encoder layer with the same index.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sbgru/layers.hpp"
#include "sbgru/rng.hpp"
#include "sbgru/tensor.hpp"

namespace sbgru {

struct ModelConfig {
  std::size_t src_vocab_size = 0;
  std::size_t tgt_vocab_size = 0;
  std::size_t hidden_units = 64;
  std::size_t enc_layers = 2;
  std::size_t dec_layers = 2;
  std::vector<LayerKind> layer_kinds;  // encoder layers first, then decoder
  std::size_t embed_dim = 64;
  double dropout = 0.0;
  double alpha = 1.0;
  std::size_t max_decode_len = 50;
  double init_sigma_scale = 0.01;
  double init_logit_pi = 3.0;

  /// Throws ContractError naming the offending field.
  void validate() const;

  /// All plain except `kind` on the last encoder layer.
  static std::vector<LayerKind> last_encoder_kinds(std::size_t enc, std::size_t dec, LayerKind kind);
};

/// Token ids for a batch laid out batch-first: element (b, t) at b·len + t.
struct Batch {
  std::size_t size = 0;
  std::size_t src_len = 0;
  std::size_t tgt_len = 0;
  std::vector<std::size_t> src;         // PAD-filled
  std::vector<std::uint8_t> src_mask;   // 1 on real tokens
  std::vector<std::size_t> tgt_in;      // BOS w1 … wn, PAD-filled
  std::vector<std::size_t> tgt_out;     // w1 … wn EOS, PAD-filled
  std::vector<double> tgt_weight;       // 1 on real target positions
  std::vector<std::size_t> pair_index;  // rows of the source corpus

  std::size_t target_tokens() const;
};

/// Noise and mode for one forward pass.
struct ForwardContext {
  NoiseMode mode = NoiseMode::eval;
  std::vector<LayerNoise> layer_noise;  // one per layer, encoder first
  RngStream* dropout_rng = nullptr;     // consulted only in train mode
};

class Seq2SeqModel {
 public:
  Seq2SeqModel() = default;
  Seq2SeqModel(ModelConfig cfg, RngStream& init_rng);

  const ModelConfig& config() const { return cfg_; }

  std::size_t num_layers() const { return encoder_.size() + decoder_.size(); }
  SBGRUCell& layer(std::size_t i);
  const SBGRUCell& layer(std::size_t i) const;
  std::string layer_name(std::size_t i) const;

  Tensor& src_embedding() { return src_embed_; }
  Tensor& tgt_embedding() { return tgt_embed_; }
  Tensor& projection() { return proj_w_; }
  Tensor& projection_bias() { return proj_b_; }

  /// Every trainable tensor with a stable checkpoint name.
  std::vector<std::pair<std::string, Tensor*>> parameters();

  std::vector<NoiseDraws> draw_noise(RngStream& rng) const;
  std::vector<LayerNoise> realize_noise(const std::vector<NoiseDraws>& draws, double lambda, NoiseMode mode,
                                        double tau) const;
  ForwardContext eval_context(double tau) const;

  /// Final state of every encoder layer, each [batch × hidden].
  std::vector<Tensor> encode(const Batch& batch, const ForwardContext& ctx) const;
  /// Single sentence; result is [enc_layers × hidden].
  Tensor encode(std::span<const std::size_t> src, const ForwardContext& ctx) const;

  /// Logits for every target position, rows ordered batch-first (b·tgt_len + t).
  Tensor forward_teacher_forced(const Batch& batch, const ForwardContext& ctx) const;

  /// Argmax decoding under `ctx` (normally eval). Stops at EOS (not emitted) or max_len.
  std::vector<std::size_t> greedy_decode(std::span<const std::size_t> src, std::size_t max_len,
                                         const ForwardContext& ctx) const;
  /// Decodes sentences independently, in parallel.
  std::vector<std::vector<std::size_t>> greedy_decode_all(const std::vector<std::vector<std::size_t>>& srcs,
                                                          std::size_t max_len, double tau) const;

 private:
  Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) const;
  Tensor decoder_step(std::vector<Tensor>& state, std::span<const std::size_t> tokens,
                      const std::vector<Tensor>& weights, const ForwardContext& ctx) const;
  std::vector<Tensor> candidate_weights(const ForwardContext& ctx) const;

  ModelConfig cfg_;
  Tensor src_embed_, tgt_embed_;
  std::vector<SBGRUCell> encoder_, decoder_;
  Tensor proj_w_, proj_b_;
};

/// Stack per-time-step rows [batch × F] into [batch·T × F], batch-first.
Tensor stack_time(const std::vector<Tensor>& steps);

}  // namespace sbgru
