#include "sbgru/model.hpp"

#include <algorithm>
#include <cmath>

#include "sbgru/corpus.hpp"
#include "sbgru/errors.hpp"

namespace sbgru {

void ModelConfig::validate() const {
  auto need = [](bool ok, const char* field) {
    if (!ok) throw ContractError(std::string("invalid model config: ") + field);
  };
  need(src_vocab_size > 0, "src_vocab_size");
  need(tgt_vocab_size > 0, "tgt_vocab_size");
  need(hidden_units > 0, "hidden_units");
  need(enc_layers > 0, "enc_layers");
  need(dec_layers > 0, "dec_layers");
  need(embed_dim > 0, "embed_dim");
  need(dropout >= 0.0 && dropout < 1.0, "dropout");
  need(alpha > 0.0, "alpha");
  need(max_decode_len > 0, "max_decode_len");
  need(layer_kinds.size() == enc_layers + dec_layers, "layer_kinds (length must equal enc_layers + dec_layers)");
}

std::vector<LayerKind> ModelConfig::last_encoder_kinds(std::size_t enc, std::size_t dec, LayerKind kind) {
  std::vector<LayerKind> kinds(enc + dec, LayerKind::plain);
  kinds[enc - 1] = kind;
  return kinds;
}

std::size_t Batch::target_tokens() const {
  std::size_t n = 0;
  for (double w : tgt_weight) n += w != 0.0;
  return n;
}

namespace {

Tensor uniform_param(Shape shape, double bound, RngStream& rng) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = bound * (2.0 * rng.uniform() - 1.0);
  return Tensor::from(std::move(shape), std::move(v), true);
}

std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

Seq2SeqModel::Seq2SeqModel(ModelConfig cfg, RngStream& init_rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t e = cfg_.embed_dim, k = cfg_.hidden_units;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(e));
  src_embed_ = uniform_param({cfg_.src_vocab_size, e}, emb_bound, init_rng);
  tgt_embed_ = uniform_param({cfg_.tgt_vocab_size, e}, emb_bound, init_rng);
  CellInit init{cfg_.alpha, cfg_.init_sigma_scale, cfg_.init_logit_pi};
  for (std::size_t i = 0; i < cfg_.enc_layers; ++i)
    encoder_.push_back(SBGRUCell::create(i == 0 ? e : k, k, cfg_.layer_kinds[i], init_rng, init));
  for (std::size_t i = 0; i < cfg_.dec_layers; ++i)
    decoder_.push_back(SBGRUCell::create(i == 0 ? e : k, k, cfg_.layer_kinds[cfg_.enc_layers + i], init_rng, init));
  proj_w_ = uniform_param({k, cfg_.tgt_vocab_size}, 1.0 / std::sqrt(static_cast<double>(k)), init_rng);
  proj_b_ = Tensor::zeros({cfg_.tgt_vocab_size}, true);
}

SBGRUCell& Seq2SeqModel::layer(std::size_t i) {
  return i < encoder_.size() ? encoder_[i] : decoder_.at(i - encoder_.size());
}

const SBGRUCell& Seq2SeqModel::layer(std::size_t i) const {
  return i < encoder_.size() ? encoder_[i] : decoder_.at(i - encoder_.size());
}

std::string Seq2SeqModel::layer_name(std::size_t i) const {
  return i < encoder_.size() ? "enc." + std::to_string(i) : "dec." + std::to_string(i - encoder_.size());
}

std::vector<std::pair<std::string, Tensor*>> Seq2SeqModel::parameters() {
  std::vector<std::pair<std::string, Tensor*>> out{{"src_embed", &src_embed_}, {"tgt_embed", &tgt_embed_}};
  for (std::size_t i = 0; i < num_layers(); ++i)
    for (auto& [name, t] : layer(i).parameters()) out.emplace_back(layer_name(i) + "." + name, t);
  out.emplace_back("proj.W", &proj_w_);
  out.emplace_back("proj.b", &proj_b_);
  return out;
}

std::vector<NoiseDraws> Seq2SeqModel::draw_noise(RngStream& rng) const {
  std::vector<NoiseDraws> out;
  for (std::size_t i = 0; i < num_layers(); ++i) out.push_back(sbgru::draw_noise(layer(i), rng));
  return out;
}

std::vector<LayerNoise> Seq2SeqModel::realize_noise(const std::vector<NoiseDraws>& draws, double lambda,
                                                    NoiseMode mode, double tau) const {
  std::vector<LayerNoise> out;
  for (std::size_t i = 0; i < num_layers(); ++i) {
    static const NoiseDraws kNone;
    out.push_back(sbgru::realize_noise(layer(i), i < draws.size() ? draws[i] : kNone, lambda, mode, tau));
  }
  return out;
}

ForwardContext Seq2SeqModel::eval_context(double tau) const {
  ForwardContext ctx;
  ctx.mode = NoiseMode::eval;
  ctx.layer_noise = realize_noise({}, 1.0, NoiseMode::eval, tau);
  return ctx;
}

std::vector<Tensor> Seq2SeqModel::candidate_weights(const ForwardContext& ctx) const {
  if (ctx.layer_noise.size() != num_layers()) throw ContractError("forward context has no noise for every layer");
  std::vector<Tensor> w;
  w.reserve(num_layers());
  for (const auto& n : ctx.layer_noise) w.push_back(n.candidate_weight());
  return w;
}

Tensor Seq2SeqModel::maybe_dropout(const Tensor& x, const ForwardContext& ctx) const {
  if (ctx.mode != NoiseMode::train || cfg_.dropout <= 0.0 || ctx.dropout_rng == nullptr) return x;
  const double keep = 1.0 - cfg_.dropout;
  std::vector<double> m(x.numel());
  for (double& v : m) v = ctx.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  return mul(x, Tensor::from(x.shape(), std::move(m)));
}

std::vector<Tensor> Seq2SeqModel::encode(const Batch& batch, const ForwardContext& ctx) const {
  if (batch.size == 0 || batch.src_len == 0) throw ContractError("encode: empty source batch");
  const auto weights = candidate_weights(ctx);
  const std::size_t bsz = batch.size, k = cfg_.hidden_units;
  std::vector<Tensor> state(encoder_.size(), Tensor::zeros({bsz, k}));
  std::vector<std::size_t> ids(bsz);
  std::vector<std::uint8_t> live(bsz);
  for (std::size_t t = 0; t < batch.src_len; ++t) {
    for (std::size_t b = 0; b < bsz; ++b) {
      ids[b] = batch.src[b * batch.src_len + t];
      live[b] = batch.src_mask[b * batch.src_len + t];
    }
    const bool all_live = std::all_of(live.begin(), live.end(), [](std::uint8_t v) { return v != 0; });
    Tensor x = embed_lookup(src_embed_, ids);
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      Tensor y = sbgru_step(maybe_dropout(x, ctx), state[l], encoder_[l], weights[l]);
      state[l] = all_live ? y : blend_rows(live, y, state[l]);
      x = state[l];
    }
  }
  return state;
}

Tensor Seq2SeqModel::encode(std::span<const std::size_t> src, const ForwardContext& ctx) const {
  if (src.empty()) throw ContractError("encode: empty source sentence");
  Batch b;
  b.size = 1;
  b.src_len = src.size();
  b.src.assign(src.begin(), src.end());
  b.src_mask.assign(src.size(), 1);
  const auto states = encode(b, ctx);
  std::vector<double> out;
  for (const auto& s : states) out.insert(out.end(), s.value().begin(), s.value().end());
  return Tensor::from({states.size(), cfg_.hidden_units}, std::move(out));
}

Tensor Seq2SeqModel::decoder_step(std::vector<Tensor>& state, std::span<const std::size_t> tokens,
                                  const std::vector<Tensor>& weights, const ForwardContext& ctx) const {
  Tensor x = embed_lookup(tgt_embed_, tokens);
  const std::size_t off = encoder_.size();
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    state[l] = sbgru_step(maybe_dropout(x, ctx), state[l], decoder_[l], weights[off + l]);
    x = state[l];
  }
  return add_row(matmul(maybe_dropout(x, ctx), proj_w_), proj_b_);
}

Tensor Seq2SeqModel::forward_teacher_forced(const Batch& batch, const ForwardContext& ctx) const {
  if (batch.tgt_len == 0) throw ContractError("forward_teacher_forced: empty target");
  for (std::size_t b = 0; b < batch.size; ++b)
    if (batch.tgt_in[b * batch.tgt_len] != kBos) throw ContractError("forward_teacher_forced: target must start with BOS");
  const auto weights = candidate_weights(ctx);
  auto enc = encode(batch, ctx);
  // Layer-wise hand-over; extra decoder layers start from zeros.
  std::vector<Tensor> state(decoder_.size());
  for (std::size_t l = 0; l < decoder_.size(); ++l)
    state[l] = l < enc.size() ? enc[l] : Tensor::zeros({batch.size, cfg_.hidden_units});
  std::vector<Tensor> steps;
  std::vector<std::size_t> tok(batch.size);
  for (std::size_t t = 0; t < batch.tgt_len; ++t) {
    for (std::size_t b = 0; b < batch.size; ++b) tok[b] = batch.tgt_in[b * batch.tgt_len + t];
    steps.push_back(decoder_step(state, tok, weights, ctx));
  }
  return stack_time(steps);
}

std::vector<std::size_t> Seq2SeqModel::greedy_decode(std::span<const std::size_t> src, std::size_t max_len,
                                                     const ForwardContext& ctx) const {
  NoGradGuard guard;
  Batch b;
  b.size = 1;
  b.src_len = src.size();
  b.src.assign(src.begin(), src.end());
  b.src_mask.assign(src.size(), 1);
  std::vector<Tensor> state(decoder_.size());
  if (!src.empty()) {
    auto enc = encode(b, ctx);
    for (std::size_t l = 0; l < decoder_.size(); ++l)
      state[l] = l < enc.size() ? enc[l] : Tensor::zeros({1, cfg_.hidden_units});
  } else {
    for (auto& s : state) s = Tensor::zeros({1, cfg_.hidden_units});
  }
  const auto weights = candidate_weights(ctx);
  std::vector<std::size_t> out;
  std::size_t prev = kBos;
  while (out.size() < max_len) {
    const Tensor logits = decoder_step(state, std::span<const std::size_t>(&prev, 1), weights, ctx);
    prev = argmax(logits.data());
    if (prev == kEos) break;
    out.push_back(prev);
  }
  return out;
}

std::vector<std::vector<std::size_t>> Seq2SeqModel::greedy_decode_all(const std::vector<std::vector<std::size_t>>& srcs,
                                                                      std::size_t max_len, double tau) const {
  const ForwardContext ctx = [&] {
    NoGradGuard guard;
    ForwardContext c = eval_context(tau);
    // Materialize W ⊙ mask once so workers only read.
    for (auto& n : c.layer_noise) {
      n.weight = n.candidate_weight();
      n.mask = Tensor();
    }
    return c;
  }();
  std::vector<std::vector<std::size_t>> out(srcs.size());
  const auto n = static_cast<std::ptrdiff_t>(srcs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = greedy_decode(srcs[i], max_len, ctx);
  return out;
}

Tensor stack_time(const std::vector<Tensor>& steps) {
  if (steps.empty()) throw ContractError("stack_time: no steps");
  const std::size_t t_len = steps.size(), bsz = steps[0].rows(), f = steps[0].cols();
  std::vector<double> out(bsz * t_len * f);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (steps[t].rows() != bsz || steps[t].cols() != f) throw ShapeError("stack_time: ragged steps");
    for (std::size_t b = 0; b < bsz; ++b)
      std::copy_n(steps[t].value().begin() + b * f, f, out.begin() + (b * t_len + t) * f);
  }
  return make_result({bsz * t_len, f}, std::move(out), steps, [t_len, bsz, f](const Node& self) {
    for (std::size_t t = 0; t < t_len; ++t) {
      Node& p = *self.parents[t];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buffer();
      for (std::size_t b = 0; b < bsz; ++b)
        for (std::size_t j = 0; j < f; ++j) g[b * f + j] += self.grad[(b * t_len + t) * f + j];
    }
  });
}

}  // namespace sbgru
