#pragma once

#include <vector>

#include "sbgru/corpus.hpp"
#include "sbgru/model.hpp"

namespace sbgru::testing {

/// 1+1 layers, 4 units, vocab 5 on both sides.
inline ModelConfig tiny_config(LayerKind enc_kind = LayerKind::sb, LayerKind dec_kind = LayerKind::sb) {
  ModelConfig c;
  c.src_vocab_size = 5;
  c.tgt_vocab_size = 5;
  c.hidden_units = 4;
  c.embed_dim = 3;
  c.enc_layers = 1;
  c.dec_layers = 1;
  c.layer_kinds = {enc_kind, dec_kind};
  c.max_decode_len = 6;
  return c;
}

/// Two pairs with sequence length 3; the second source is padded.
inline Batch tiny_batch() {
  Batch b;
  b.size = 2;
  b.src_len = 3;
  b.tgt_len = 3;
  b.src = {4, 3, 4, 4, 4, kPad};
  b.src_mask = {1, 1, 1, 1, 1, 0};
  b.tgt_in = {kBos, 4, 3, kBos, 4, kPad};
  b.tgt_out = {4, 3, kEos, 4, kEos, kPad};
  b.tgt_weight = {1, 1, 1, 1, 1, 0};
  b.pair_index = {0, 1};
  return b;
}

/// Shift every parameter off its initial constant so gradient checks see
/// distinct values everywhere.
inline void jitter(Seq2SeqModel& m, std::uint64_t seed, double amount = 0.3) {
  RngStream rng(seed);
  for (auto& [name, t] : m.parameters())
    for (double& v : t->mutable_data()) v += amount * (2.0 * rng.uniform() - 1.0);
}

}  // namespace sbgru::testing
