#pragma once

// Binary checkpoint container.
//
// Layout (all integers little-endian):
//
//   "SBGRU1"                      6-byte magic
//   u32   version                 currently 1
//   u64   metadata byte length, then UTF-8 text: one `key = value` per line
//   u32   tensor count, then per tensor:
//           u16 name length, name bytes
//           u8  rank, u64 extent × rank
//           u8  encoding tag (0 raw_f64, 1 raw_f32, 2 grid, 3 bitmap_mask)
//           u16 mask-name length, mask name (empty: dense)
//           grid only: u8 bits, f64 delta, i64 min_index
//           u64 payload offset, u64 payload length
//   payload bytes
//
// A tensor naming a mask stores values only for entries whose mask bit is
// set, in row-major order. Grid values decode as (min_index + index)·delta,
// with indices packed LSB-first at `bits` per entry. Bitmaps pack one bit per
// entry, LSB-first.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sbgru/corpus.hpp"
#include "sbgru/model.hpp"

namespace sbgru {

inline constexpr char kCheckpointMagic[] = "SBGRU1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class Encoding : std::uint8_t { raw_f64 = 0, raw_f32 = 1, grid = 2, bitmap_mask = 3 };

std::string_view to_string(Encoding e);

struct GridParams {
  std::uint8_t bits = 1;
  double delta = 1.0;
  std::int64_t min_index = 0;

  bool operator==(const GridParams&) const = default;
};

struct TensorRecord {
  std::string name;
  Shape shape;
  Encoding encoding = Encoding::raw_f64;
  std::string mask;  // name of a bitmap_mask record, or empty
  GridParams grid;   // meaningful for Encoding::grid only
  std::vector<std::uint8_t> payload;

  bool operator==(const TensorRecord&) const = default;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> metadata;  // insertion order is kept
  std::vector<TensorRecord> tensors;

  bool operator==(const Checkpoint&) const = default;

  const TensorRecord* find(std::string_view name) const;
  std::optional<std::string> meta(std::string_view key) const;
  std::string meta_or(std::string_view key, std::string fallback) const;
  void set_meta(const std::string& key, std::string value);
};

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, unknown version or truncation.
Checkpoint deserialize(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// ---- tensor payload codecs -------------------------------------------------

TensorRecord encode_raw_f64(std::string name, Shape shape, std::span<const double> values);
TensorRecord encode_raw_f32(std::string name, Shape shape, std::span<const double> values, std::string mask = {},
                            std::span<const std::uint8_t> mask_bits = {});
TensorRecord encode_bitmap(std::string name, Shape shape, std::span<const std::uint8_t> bits);
TensorRecord encode_grid(std::string name, Shape shape, const GridParams& grid, std::span<const std::int64_t> indices,
                         std::string mask = {}, std::span<const std::uint8_t> mask_bits = {});

/// Dense values of a record; masked-out entries decode to zero.
std::vector<double> decode_values(const Checkpoint& ckpt, const TensorRecord& rec);
std::vector<std::uint8_t> decode_bitmap(const TensorRecord& rec);

// ---- model <-> checkpoint ---------------------------------------------------

/// Everything a checkpoint carries besides raw tensors.
struct CheckpointState {
  std::uint64_t step = 0;
  std::uint64_t adam_step = 0;
  std::vector<std::pair<std::string, std::string>> extra;  // config snapshots, metrics
};

std::string format_double(double v);

void write_model_config(const ModelConfig& cfg, Checkpoint& ckpt);
ModelConfig read_model_config(const Checkpoint& ckpt);

Checkpoint make_checkpoint(Seq2SeqModel& model, const Vocab& src, const Vocab& tgt, const CheckpointState& state,
                           const std::vector<std::pair<std::string, std::vector<double>>>& extra_tensors = {});

struct LoadedModel {
  Seq2SeqModel model;
  Vocab src_vocab;
  Vocab tgt_vocab;
  std::uint64_t step = 0;
  std::uint64_t adam_step = 0;
};

/// Rebuild the model. Compressed tensors decode to their stored values and
/// bitmap masks become the layers' fixed masks.
LoadedModel load_model(const Checkpoint& ckpt);

}  // namespace sbgru
