#include "sbgru/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sbgru/errors.hpp"
#include "sbgru/metrics.hpp"

namespace sbgru {

void adam_update(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t index,
                 double lr) {
  if (param.size() != grad.size()) throw ShapeError("adam_update: parameter and gradient sizes differ");
  if (state.step == 0) throw ContractError("adam_update: advance state.step before updating");
  if (state.m.size() <= index) {
    state.m.resize(index + 1);
    state.v.resize(index + 1);
  }
  auto& m = state.m[index];
  auto& v = state.v[index];
  if (m.empty()) {
    m.assign(param.size(), 0.0);
    v.assign(param.size(), 0.0);
  }
  if (m.size() != param.size()) throw ShapeError("adam_update: moment size differs from parameter");
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
    v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
  }
}

void adam_step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state, double lr) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) adam_update(params[i], grads[i], state, i, lr);
}

double clip_global_norm(std::vector<std::vector<double>>& grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ContractError("clip_norm must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  const double n = std::sqrt(sq);
  if (n > clip_norm) {
    const double s = clip_norm / n;
    for (auto& g : grads)
      for (double& x : g) x *= s;
  }
  return n;
}

std::string metric_log_header() { return "step\tnll\tkl_w\tkl_z\tkl_u\tlambda"; }

std::string metric_log_row(const StepRecord& r) {
  const auto& p = r.parts;
  return std::to_string(r.step) + "\t" + format_double(p.nll) + "\t" + format_double(p.kl_w) + "\t" +
         format_double(p.kl_z) + "\t" + format_double(p.kl_u) + "\t" + format_double(p.lambda);
}

std::vector<Sentence> translate(const Seq2SeqModel& model, const Vocab& src, const Vocab& tgt,
                                const std::vector<Sentence>& sources, double tau) {
  std::vector<std::vector<std::size_t>> ids;
  ids.reserve(sources.size());
  for (const auto& s : sources) ids.push_back(src.encode(s));
  const auto out = model.greedy_decode_all(ids, model.config().max_decode_len, tau);
  std::vector<Sentence> hyps;
  hyps.reserve(out.size());
  for (const auto& o : out) hyps.push_back(tgt.decode(o));
  return hyps;
}

double perplexity(const Seq2SeqModel& model, const std::vector<Batch>& batches, double tau) {
  NoGradGuard guard;
  const ForwardContext ctx = model.eval_context(tau);
  double nll = 0.0;
  std::size_t tokens = 0;
  for (const auto& b : batches) {
    const Tensor logits = model.forward_teacher_forced(b, ctx);
    nll += nll_tokens(logits.data(), logits.cols(), b.tgt_out, b.tgt_weight);
    tokens += b.target_tokens();
  }
  if (tokens == 0) throw ContractError("perplexity: no target tokens");
  return std::exp(nll / static_cast<double>(tokens));
}

ResumeState resume_state(const Checkpoint& ckpt, Seq2SeqModel& model) {
  ResumeState rs;
  rs.step = std::stoull(ckpt.meta_or("state.step", "0"));
  rs.adam.step = std::stoull(ckpt.meta_or("state.adam_step", "0"));
  const auto params = model.parameters();
  rs.adam.m.resize(params.size());
  rs.adam.v.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, t] = params[i];
    const TensorRecord* m = ckpt.find("adam.m." + name);
    const TensorRecord* v = ckpt.find("adam.v." + name);
    if (!m || !v) {
      if (rs.adam.step > 0) throw FormatError("checkpoint lacks optimizer moments for " + name);
      continue;
    }
    rs.adam.m[i] = decode_values(ckpt, *m);
    rs.adam.v[i] = decode_values(ckpt, *v);
    if (rs.adam.m[i].size() != t->numel() || rs.adam.v[i].size() != t->numel())
      throw FormatError("optimizer moments for " + name + " have the wrong size");
  }
  return rs;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, RngStream rng) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

std::string dump_batch(const Batch& b, const ParallelCorpus& corpus) {
  std::ostringstream os;
  for (std::size_t i : b.pair_index)
    os << "\n  pair " << i << ": " << join(corpus.pairs[i].src) << " ||| " << join(corpus.pairs[i].tgt);
  return os.str();
}

std::vector<std::pair<std::string, std::string>> config_snapshot(const TrainConfig& cfg) {
  return {
      {"train.learning_rate", format_double(cfg.learning_rate)},
      {"train.batch_size", std::to_string(cfg.batch_size)},
      {"train.max_steps", std::to_string(cfg.max_steps)},
      {"train.clip_norm", format_double(cfg.clip_norm)},
      {"train.seed", std::to_string(cfg.seed)},
      {"train.eval_every", std::to_string(cfg.eval_every)},
      {"train.patience", std::to_string(cfg.patience)},
      {"train.lambda0", format_double(cfg.schedule.lambda0)},
      {"train.lambda_min", format_double(cfg.schedule.lambda_min)},
      {"train.decay_rate", format_double(cfg.schedule.decay_rate)},
      {"train.update_every", std::to_string(cfg.schedule.update_every)},
      {"train.kl_mode", cfg.kl_mode == KlMode::closed_form ? "closed-form" : "monte-carlo"},
  };
}

}  // namespace

TrainResult train(Seq2SeqModel& model, const Vocab& src, const Vocab& tgt, const ParallelCorpus& train_set,
                  const ParallelCorpus* dev_set, const TrainConfig& cfg, const ResumeState* resume) {
  if (train_set.size() == 0) throw ContractError("train: empty training corpus");
  if (cfg.batch_size == 0) throw ContractError("train: batch_size must be positive");
  if (cfg.eval_every == 0) throw ContractError("train: eval_every must be positive");
  const ParallelCorpus& dev = dev_set && dev_set->size() ? *dev_set : train_set;
  const auto batches = batchify(train_set, cfg.batch_size, src, tgt);
  const std::size_t nb = batches.size();
  std::uint64_t step_limit = cfg.max_steps;
  if (cfg.epochs > 0) step_limit = std::min<std::uint64_t>(step_limit, cfg.epochs * nb);

  const RngStream root(cfg.seed);
  RngStream step_rng = root.split(1);
  const RngStream shuffle_rng = root.split(2);

  auto params = model.parameters();
  AdamState adam = resume ? resume->adam : AdamState{};
  std::uint64_t step = resume ? resume->step : 0;

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
  std::ofstream log, timing;
  if (!cfg.log_path.empty()) {
    if (cfg.log_path.has_parent_path()) std::filesystem::create_directories(cfg.log_path.parent_path());
    const bool append = resume && std::filesystem::exists(cfg.log_path);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    log.open(cfg.log_path, std::ios::out | mode);
    timing.open(cfg.log_path.string() + ".timing", std::ios::out | mode);
    if (!log || !timing) throw std::runtime_error("cannot write metric log " + cfg.log_path.string());
    if (!append) {
      log << metric_log_header() << "\n";
      timing << "step\twall_ms\n";
    }
  }
  const std::vector<Sentence> dev_src = sources(dev), dev_ref = targets(dev);
  TrainResult res;
  std::uint64_t bad_evals = 0;
  std::uint64_t cached_epoch = ~std::uint64_t{0};
  std::vector<std::size_t> order;

  auto snapshot = [&](std::vector<std::pair<std::string, std::string>> extra) {
    CheckpointState st{step, adam.step, config_snapshot(cfg)};
    for (auto& e : extra) st.extra.push_back(std::move(e));
    std::vector<std::pair<std::string, std::vector<double>>> moments;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const std::size_t n = params[i].second->numel();
      const bool have = i < adam.m.size() && !adam.m[i].empty();
      moments.push_back({"adam.m." + params[i].first, have ? adam.m[i] : std::vector<double>(n, 0.0)});
      moments.push_back({"adam.v." + params[i].first, have ? adam.v[i] : std::vector<double>(n, 0.0)});
    }
    return make_checkpoint(model, src, tgt, st, moments);
  };

  auto evaluate = [&] {
    const auto hyps = translate(model, src, tgt, dev_src, cfg.tau);
    const double bleu = bleu4(hyps, dev_ref);
    const double rouge = corpus_rouge_l(hyps, dev_ref);
    std::vector<std::pair<std::string, std::string>> metrics{{"dev.bleu4", format_double(bleu)},
                                                             {"dev.rouge_l", format_double(rouge)}};
    if (cfg.progress) {
      const auto& p = res.history.empty() ? ElboBreakdown{} : res.history.back().parts;
      *cfg.progress << "step " << step << " nll " << p.nll << " kl_w " << p.kl_w << " kl_z " << p.kl_z << " kl_u "
                    << p.kl_u << " lambda " << p.lambda << " dev BLEU-4 " << bleu << " ROUGE-L " << rouge << "\n";
    }
    if (bleu > res.best_dev_bleu) {
      res.best_dev_bleu = bleu;
      res.best_step = step;
      res.best = snapshot(metrics);
      if (!cfg.out_dir.empty()) write_checkpoint(cfg.out_dir / "best.ckpt", *res.best);
      bad_evals = 0;
    } else {
      ++bad_evals;
    }
    res.last = snapshot(metrics);
    if (!cfg.out_dir.empty()) write_checkpoint(cfg.out_dir / "last.ckpt", res.last);
    return cfg.patience > 0 && bad_evals >= cfg.patience;
  };

  bool evaluated_last = false;
  while (step < step_limit) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t epoch = step / nb;
    if (epoch != cached_epoch) {
      order = epoch_order(nb, shuffle_rng.split(epoch));
      cached_epoch = epoch;
    }
    const Batch& batch = batches[order[step % nb]];

    for (auto& [name, t] : params) t->zero_grad();
    ElboResult er = elbo_loss(model, batch, step_rng, step, train_set.size(), cfg.schedule, cfg.kl_mode);
    if (!std::isfinite(er.parts.total_loss))
      throw NumericError("non-finite loss at step " + std::to_string(step) + " (nll " + format_double(er.parts.nll) +
                         ", kl_w " + format_double(er.parts.kl_w) + ", kl_z " + format_double(er.parts.kl_z) +
                         ", kl_u " + format_double(er.parts.kl_u) + "); batch:" + dump_batch(batch, train_set));
    backward(er.loss);

    std::vector<std::vector<double>> grads(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Tensor& t = *params[i].second;
      if (t.has_grad()) {
        grads[i].assign(t.grad().begin(), t.grad().end());
      } else {
        grads[i].assign(t.numel(), 0.0);
      }
      for (double g : grads[i])
        if (!std::isfinite(g))
          throw NumericError("non-finite gradient for " + params[i].first + " at step " + std::to_string(step) +
                             "; batch:" + dump_batch(batch, train_set));
    }
    clip_global_norm(grads, cfg.clip_norm);
    std::vector<std::span<double>> pspans;
    std::vector<std::span<const double>> gspans;
    for (std::size_t i = 0; i < params.size(); ++i) {
      pspans.push_back(params[i].second->mutable_data());
      gspans.push_back(grads[i]);
    }
    adam_step(pspans, gspans, adam, cfg.learning_rate);

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    StepRecord rec{step, er.parts, ms};
    if (log.is_open()) {
      log << metric_log_row(rec) << "\n";
      timing << step << "\t" << ms << "\n";
    }
    res.history.push_back(rec);
    ++step;
    ++res.steps_run;

    evaluated_last = false;
    if (step % cfg.eval_every == 0) {
      evaluated_last = true;
      if (evaluate()) {
        res.stopped_early = true;
        break;
      }
    }
  }
  if (!evaluated_last) evaluate();
  if (log.is_open()) {
    log.flush();
    timing.flush();
  }
  res.final_step = step;
  return res;
}

}  // namespace sbgru
