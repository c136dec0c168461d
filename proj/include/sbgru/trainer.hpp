#pragma once

// Adam-based SGVB training with global-norm clipping, temperature annealing,
// periodic dev evaluation and best/last checkpoints.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sbgru/checkpoint.hpp"
#include "sbgru/corpus.hpp"
#include "sbgru/elbo.hpp"
#include "sbgru/model.hpp"
#include "sbgru/stochastic.hpp"

namespace sbgru {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t max_steps = 2000;
  std::uint64_t epochs = 0;  // 0: bounded by max_steps only
  double clip_norm = 5.0;
  std::uint64_t seed = 1;
  std::uint64_t eval_every = 100;
  std::uint64_t patience = 10;  // evaluations without dev improvement; 0 disables
  TemperatureSchedule schedule;
  KlMode kl_mode = KlMode::closed_form;
  double tau = 0.01;  // pruning threshold for evaluation decodes
  std::filesystem::path out_dir;   // best.ckpt / last.ckpt; empty: none written
  std::filesystem::path log_path;  // metric log; empty: none written
  std::ostream* progress = nullptr;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update of `param` in place. `index` picks the
/// moment slot; the caller advances state.step once per optimizer step.
void adam_update(std::span<double> param, std::span<const double> grad, AdamState& state, std::size_t index,
                 double lr);

/// Advance the step counter and update every parameter.
void adam_step(const std::vector<std::span<double>>& params, const std::vector<std::span<const double>>& grads,
               AdamState& state, double lr);

/// Scale all gradients by clip_norm/n when their global L2 norm n exceeds
/// clip_norm. Returns n.
double clip_global_norm(std::vector<std::vector<double>>& grads, double clip_norm);

struct StepRecord {
  std::uint64_t step = 0;
  ElboBreakdown parts;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::uint64_t steps_run = 0;
  std::uint64_t final_step = 0;
  std::vector<StepRecord> history;
  double best_dev_bleu = -1.0;
  std::uint64_t best_step = 0;
  bool stopped_early = false;
  std::optional<Checkpoint> best;
  Checkpoint last;
};

/// Optimizer state and position restored from a checkpoint.
struct ResumeState {
  std::uint64_t step = 0;
  AdamState adam;
};

ResumeState resume_state(const Checkpoint& ckpt, Seq2SeqModel& model);

/// Runs until max_steps (or epochs, or early stopping). The model must have
/// been built over `src`/`tgt`. Without a dev set the training set stands in.
TrainResult train(Seq2SeqModel& model, const Vocab& src, const Vocab& tgt, const ParallelCorpus& train_set,
                  const ParallelCorpus* dev_set, const TrainConfig& cfg, const ResumeState* resume = nullptr);

/// Greedy translations under posterior means and hard masks.
std::vector<Sentence> translate(const Seq2SeqModel& model, const Vocab& src, const Vocab& tgt,
                                const std::vector<Sentence>& sources, double tau);

/// exp(total token NLL / tokens), teacher-forced in eval mode.
double perplexity(const Seq2SeqModel& model, const std::vector<Batch>& batches, double tau);

/// Metric-log row and header, tab separated.
std::string metric_log_header();
std::string metric_log_row(const StepRecord& r);

}  // namespace sbgru
