#include "sbgru/checkpoint.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sbgru/errors.hpp"

namespace sbgru {

std::string_view to_string(Encoding e) {
  switch (e) {
    case Encoding::raw_f64: return "raw_f64";
    case Encoding::raw_f32: return "raw_f32";
    case Encoding::grid: return "grid";
    case Encoding::bitmap_mask: return "bitmap_mask";
  }
  return "?";
}

const TensorRecord* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::optional<std::string> Checkpoint::meta(std::string_view key) const {
  for (const auto& [k, v] : metadata)
    if (k == key) return v;
  return std::nullopt;
}

std::string Checkpoint::meta_or(std::string_view key, std::string fallback) const {
  auto v = meta(key);
  return v ? *v : std::move(fallback);
}

void Checkpoint::set_meta(const std::string& key, std::string value) {
  for (auto& [k, v] : metadata)
    if (k == key) {
      v = std::move(value);
      return;
    }
  metadata.emplace_back(key, std::move(value));
}

// ---- byte-level I/O ----------------------------------------------------------

namespace {

class Writer {
 public:
  std::vector<std::uint8_t> bytes;

  template <class T>
  void put(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_str16(const std::string& s) {
    if (s.size() > 0xFFFF) throw ContractError("checkpoint name too long: " + s);
    put(static_cast<std::uint16_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void put_raw(std::span<const std::uint8_t> b) { bytes.insert(bytes.end(), b.begin(), b.end()); }
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

  template <class T>
  T get() {
    need(sizeof(T));
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::string get_str16() { return get_str(get<std::uint16_t>()); }
  std::size_t pos() const { return pos_; }
  std::size_t size() const { return b_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

std::string metadata_text(const Checkpoint& c) {
  std::string s;
  for (const auto& [k, v] : c.metadata) {
    if (k.find_first_of(" \n=") != std::string::npos || v.find('\n') != std::string::npos)
      throw ContractError("metadata entry cannot be stored as key = value: " + k);
    s += k + " = " + v + "\n";
  }
  return s;
}

std::vector<std::pair<std::string, std::string>> parse_metadata(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) throw FormatError("metadata block is not newline-terminated");
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    const std::size_t sep = line.find(" = ");
    if (sep == std::string::npos) throw FormatError("malformed metadata line: " + line);
    out.emplace_back(line.substr(0, sep), line.substr(sep + 3));
  }
  return out;
}

void check_mask(std::span<const std::uint8_t> mask_bits, std::size_t n) {
  if (!mask_bits.empty() && mask_bits.size() != n) throw ShapeError("mask size does not match tensor");
}

bool kept(std::span<const std::uint8_t> mask_bits, std::size_t i) { return mask_bits.empty() || mask_bits[i] != 0; }

}  // namespace

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  Writer w;
  w.put_raw({reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 6});
  w.put(ckpt.version);
  const std::string meta = metadata_text(ckpt);
  w.put(static_cast<std::uint64_t>(meta.size()));
  w.put_raw({reinterpret_cast<const std::uint8_t*>(meta.data()), meta.size()});
  w.put(static_cast<std::uint32_t>(ckpt.tensors.size()));
  std::uint64_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    w.put_str16(t.name);
    w.put(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) w.put(static_cast<std::uint64_t>(d));
    w.put(static_cast<std::uint8_t>(t.encoding));
    w.put_str16(t.mask);
    if (t.encoding == Encoding::grid) {
      w.put(t.grid.bits);
      w.put_f64(t.grid.delta);
      w.put(t.grid.min_index);
    }
    w.put(offset);
    w.put(static_cast<std::uint64_t>(t.payload.size()));
    offset += t.payload.size();
  }
  for (const auto& t : ckpt.tensors) w.put_raw(t.payload);
  return std::move(w.bytes);
}

Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.size() < 6 || r.get_str(6) != std::string(kCheckpointMagic, 6))
    throw FormatError("not a checkpoint: bad magic (expected SBGRU1)");
  Checkpoint c;
  c.version = r.get<std::uint32_t>();
  if (c.version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
  const auto meta_len = r.get<std::uint64_t>();
  if (meta_len > r.size()) throw FormatError("checkpoint truncated in metadata");
  c.metadata = parse_metadata(r.get_str(meta_len));
  const auto count = r.get<std::uint32_t>();
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorRecord t;
    t.name = r.get_str16();
    const auto rank = r.get<std::uint8_t>();
    for (std::uint8_t d = 0; d < rank; ++d) t.shape.push_back(r.get<std::uint64_t>());
    const auto tag = r.get<std::uint8_t>();
    if (tag > 3) throw FormatError("unknown encoding tag " + std::to_string(tag) + " for " + t.name);
    t.encoding = static_cast<Encoding>(tag);
    t.mask = r.get_str16();
    if (t.encoding == Encoding::grid) {
      t.grid.bits = r.get<std::uint8_t>();
      t.grid.delta = r.get_f64();
      t.grid.min_index = r.get<std::int64_t>();
    }
    const auto off = r.get<std::uint64_t>();
    const auto len = r.get<std::uint64_t>();
    spans.emplace_back(off, len);
    c.tensors.push_back(std::move(t));
  }
  const std::size_t base = r.pos();
  std::size_t end = base;
  for (std::size_t i = 0; i < c.tensors.size(); ++i) {
    const auto [off, len] = spans[i];
    if (off > bytes.size() || len > bytes.size() || base + off + len > bytes.size())
      throw FormatError("checkpoint truncated in payload of " + c.tensors[i].name);
    c.tensors[i].payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(base + off),
                                bytes.begin() + static_cast<std::ptrdiff_t>(base + off + len));
    end = std::max<std::size_t>(end, base + off + len);
  }
  if (end != bytes.size()) throw FormatError("checkpoint has trailing bytes");
  return c;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// ---- codecs ----------------------------------------------------------------------

TensorRecord encode_raw_f64(std::string name, Shape shape, std::span<const double> values) {
  if (numel(shape) != values.size()) throw ShapeError("encode_raw_f64: shape/value mismatch for " + name);
  Writer w;
  for (double v : values) w.put_f64(v);
  return {std::move(name), std::move(shape), Encoding::raw_f64, {}, {}, std::move(w.bytes)};
}

TensorRecord encode_raw_f32(std::string name, Shape shape, std::span<const double> values, std::string mask,
                            std::span<const std::uint8_t> mask_bits) {
  if (numel(shape) != values.size()) throw ShapeError("encode_raw_f32: shape/value mismatch for " + name);
  check_mask(mask_bits, values.size());
  Writer w;
  for (std::size_t i = 0; i < values.size(); ++i)
    if (kept(mask_bits, i)) w.put(std::bit_cast<std::uint32_t>(static_cast<float>(values[i])));
  return {std::move(name), std::move(shape), Encoding::raw_f32, std::move(mask), {}, std::move(w.bytes)};
}

TensorRecord encode_bitmap(std::string name, Shape shape, std::span<const std::uint8_t> bits) {
  if (numel(shape) != bits.size()) throw ShapeError("encode_bitmap: shape/value mismatch for " + name);
  std::vector<std::uint8_t> packed((bits.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < bits.size(); ++i)
    if (bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
  return {std::move(name), std::move(shape), Encoding::bitmap_mask, {}, {}, std::move(packed)};
}

TensorRecord encode_grid(std::string name, Shape shape, const GridParams& grid, std::span<const std::int64_t> indices,
                         std::string mask, std::span<const std::uint8_t> mask_bits) {
  if (numel(shape) != indices.size()) throw ShapeError("encode_grid: shape/value mismatch for " + name);
  if (grid.bits == 0 || grid.bits > 62) throw ContractError("encode_grid: bits must lie in [1, 62]");
  check_mask(mask_bits, indices.size());
  std::vector<std::uint8_t> packed;
  std::uint64_t bitpos = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (!kept(mask_bits, i)) continue;
    const std::int64_t rel = indices[i] - grid.min_index;
    if (rel < 0 || (grid.bits < 63 && static_cast<std::uint64_t>(rel) >> grid.bits))
      throw ContractError("encode_grid: index does not fit in " + std::to_string(grid.bits) + " bits");
    for (unsigned b = 0; b < grid.bits; ++b, ++bitpos) {
      if (bitpos / 8 >= packed.size()) packed.push_back(0);
      if ((static_cast<std::uint64_t>(rel) >> b) & 1u) packed[bitpos / 8] |= static_cast<std::uint8_t>(1u << (bitpos % 8));
    }
  }
  return {std::move(name), std::move(shape), Encoding::grid, std::move(mask), grid, std::move(packed)};
}

std::vector<std::uint8_t> decode_bitmap(const TensorRecord& rec) {
  if (rec.encoding != Encoding::bitmap_mask) throw FormatError(rec.name + " is not a bitmap");
  const std::size_t n = numel(rec.shape);
  if (rec.payload.size() != (n + 7) / 8) throw FormatError("bitmap payload size mismatch for " + rec.name);
  std::vector<std::uint8_t> bits(n);
  for (std::size_t i = 0; i < n; ++i) bits[i] = (rec.payload[i / 8] >> (i % 8)) & 1u;
  return bits;
}

std::vector<double> decode_values(const Checkpoint& ckpt, const TensorRecord& rec) {
  const std::size_t n = numel(rec.shape);
  std::vector<std::uint8_t> mask_bits;
  if (!rec.mask.empty()) {
    const TensorRecord* m = ckpt.find(rec.mask);
    if (!m) throw FormatError(rec.name + " references missing mask " + rec.mask);
    mask_bits = decode_bitmap(*m);
    if (mask_bits.size() != n) throw FormatError("mask " + rec.mask + " does not match " + rec.name);
  }
  std::size_t stored = 0;
  for (std::size_t i = 0; i < n; ++i) stored += kept(mask_bits, i);
  std::vector<double> out(n, 0.0);
  Reader r(rec.payload);
  switch (rec.encoding) {
    case Encoding::raw_f64:
      if (rec.payload.size() != 8 * stored) throw FormatError("payload size mismatch for " + rec.name);
      for (std::size_t i = 0; i < n; ++i)
        if (kept(mask_bits, i)) out[i] = r.get_f64();
      break;
    case Encoding::raw_f32:
      if (rec.payload.size() != 4 * stored) throw FormatError("payload size mismatch for " + rec.name);
      for (std::size_t i = 0; i < n; ++i)
        if (kept(mask_bits, i)) out[i] = static_cast<double>(std::bit_cast<float>(r.get<std::uint32_t>()));
      break;
    case Encoding::grid: {
      const std::uint64_t bits = rec.grid.bits;
      if (bits == 0 || bits > 62) throw FormatError("grid bit width out of range for " + rec.name);
      if (rec.payload.size() != (stored * bits + 7) / 8) throw FormatError("payload size mismatch for " + rec.name);
      std::uint64_t bitpos = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (!kept(mask_bits, i)) continue;
        std::uint64_t rel = 0;
        for (unsigned b = 0; b < bits; ++b, ++bitpos)
          rel |= static_cast<std::uint64_t>((rec.payload[bitpos / 8] >> (bitpos % 8)) & 1u) << b;
        out[i] = static_cast<double>(rec.grid.min_index + static_cast<std::int64_t>(rel)) * rec.grid.delta;
      }
      break;
    }
    case Encoding::bitmap_mask: {
      const auto bits = decode_bitmap(rec);
      for (std::size_t i = 0; i < n; ++i) out[i] = bits[i];
      break;
    }
  }
  return out;
}

// ---- model <-> checkpoint ------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

namespace {

double parse_double(const std::string& s, const std::string& key) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad number for " + key + ": " + s);
  return v;
}

std::uint64_t parse_uint(const std::string& s, const std::string& key) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw FormatError("bad integer for " + key + ": " + s);
  return v;
}

std::string required(const Checkpoint& c, const std::string& key) {
  auto v = c.meta(key);
  if (!v) throw FormatError("checkpoint metadata lacks " + key);
  return *v;
}

std::string join_kinds(const std::vector<LayerKind>& kinds) {
  std::string s;
  for (std::size_t i = 0; i < kinds.size(); ++i) s += (i ? "," : "") + std::string(to_string(kinds[i]));
  return s;
}

}  // namespace

void write_model_config(const ModelConfig& cfg, Checkpoint& c) {
  c.set_meta("model.src_vocab_size", std::to_string(cfg.src_vocab_size));
  c.set_meta("model.tgt_vocab_size", std::to_string(cfg.tgt_vocab_size));
  c.set_meta("model.hidden_units", std::to_string(cfg.hidden_units));
  c.set_meta("model.enc_layers", std::to_string(cfg.enc_layers));
  c.set_meta("model.dec_layers", std::to_string(cfg.dec_layers));
  c.set_meta("model.layer_kinds", join_kinds(cfg.layer_kinds));
  c.set_meta("model.embed_dim", std::to_string(cfg.embed_dim));
  c.set_meta("model.dropout", format_double(cfg.dropout));
  c.set_meta("model.alpha", format_double(cfg.alpha));
  c.set_meta("model.max_decode_len", std::to_string(cfg.max_decode_len));
  c.set_meta("model.init_sigma_scale", format_double(cfg.init_sigma_scale));
  c.set_meta("model.init_logit_pi", format_double(cfg.init_logit_pi));
}

ModelConfig read_model_config(const Checkpoint& c) {
  ModelConfig cfg;
  auto u = [&](const std::string& k) { return static_cast<std::size_t>(parse_uint(required(c, k), k)); };
  auto d = [&](const std::string& k) { return parse_double(required(c, k), k); };
  cfg.src_vocab_size = u("model.src_vocab_size");
  cfg.tgt_vocab_size = u("model.tgt_vocab_size");
  cfg.hidden_units = u("model.hidden_units");
  cfg.enc_layers = u("model.enc_layers");
  cfg.dec_layers = u("model.dec_layers");
  cfg.embed_dim = u("model.embed_dim");
  cfg.dropout = d("model.dropout");
  cfg.alpha = d("model.alpha");
  cfg.max_decode_len = u("model.max_decode_len");
  cfg.init_sigma_scale = d("model.init_sigma_scale");
  cfg.init_logit_pi = d("model.init_logit_pi");
  std::stringstream kinds(required(c, "model.layer_kinds"));
  for (std::string k; std::getline(kinds, k, ',');) cfg.layer_kinds.push_back(parse_layer_kind(k));
  return cfg;
}

Checkpoint make_checkpoint(Seq2SeqModel& model, const Vocab& src, const Vocab& tgt, const CheckpointState& state,
                           const std::vector<std::pair<std::string, std::vector<double>>>& extra_tensors) {
  Checkpoint c;
  write_model_config(model.config(), c);
  c.set_meta("vocab.src.min_freq", std::to_string(src.min_freq()));
  c.set_meta("vocab.src", join(src.tokens()));
  c.set_meta("vocab.tgt.min_freq", std::to_string(tgt.min_freq()));
  c.set_meta("vocab.tgt", join(tgt.tokens()));
  c.set_meta("state.step", std::to_string(state.step));
  c.set_meta("state.adam_step", std::to_string(state.adam_step));
  for (const auto& [k, v] : state.extra) c.set_meta(k, v);
  for (auto& [name, t] : model.parameters()) c.tensors.push_back(encode_raw_f64(name, t->shape(), t->data()));
  for (const auto& [name, values] : extra_tensors)
    c.tensors.push_back(encode_raw_f64(name, {values.size()}, values));
  return c;
}

LoadedModel load_model(const Checkpoint& ckpt) {
  ModelConfig cfg = read_model_config(ckpt);
  auto vocab = [&](const std::string& side) {
    const auto min_freq = parse_uint(ckpt.meta_or("vocab." + side + ".min_freq", "1"), "min_freq");
    return Vocab::from_tokens(tokenize(required(ckpt, "vocab." + side)), min_freq);
  };
  LoadedModel out{Seq2SeqModel(), vocab("src"), vocab("tgt")};
  if (out.src_vocab.size() != cfg.src_vocab_size || out.tgt_vocab.size() != cfg.tgt_vocab_size)
    throw FormatError("stored vocabulary sizes disagree with the model config");
  RngStream rng(0);
  out.model = Seq2SeqModel(cfg, rng);
  const bool compressed = ckpt.meta("compression.tau").has_value();
  std::vector<std::string> missing;
  for (auto& [name, t] : out.model.parameters()) {
    const TensorRecord* rec = ckpt.find(name);
    if (!rec) {
      const bool optional = compressed && (name.ends_with(".W_y.rho") || name.ends_with(".Z.logit"));
      if (!optional) missing.push_back(name);
      continue;
    }
    if (rec->shape != t->shape())
      throw FormatError("tensor " + name + " has shape " + shape_str(rec->shape) + ", model expects " +
                        shape_str(t->shape()));
    const auto values = decode_values(ckpt, *rec);
    std::copy(values.begin(), values.end(), t->mutable_data().begin());
  }
  if (!missing.empty()) {
    std::string msg = "checkpoint is missing tensors:";
    for (const auto& m : missing) msg += " " + m;
    throw FormatError(msg);
  }
  for (std::size_t i = 0; i < out.model.num_layers(); ++i) {
    if (const TensorRecord* m = ckpt.find(out.model.layer_name(i) + ".Z.mask")) out.model.layer(i).fixed_mask = decode_bitmap(*m);
  }
  out.step = parse_uint(ckpt.meta_or("state.step", "0"), "state.step");
  out.adam_step = parse_uint(ckpt.meta_or("state.adam_step", "0"), "state.adam_step");
  return out;
}

}  // namespace sbgru
