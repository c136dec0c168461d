#include "sbgru/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sbgru/checkpoint.hpp"
#include "sbgru/compression.hpp"
#include "sbgru/config.hpp"
#include "sbgru/errors.hpp"
#include "sbgru/metrics.hpp"
#include "sbgru/trainer.hpp"

namespace sbgru::cli {

namespace {

void require_file(const std::filesystem::path& p, const char* what) {
  if (!std::filesystem::is_regular_file(p)) throw std::runtime_error(std::string(what) + " not found: " + p.string());
}

std::string kinds_summary(const ModelConfig& cfg) {
  std::string s;
  for (std::size_t i = 0; i < cfg.layer_kinds.size(); ++i) {
    if (i) s += ",";
    s += to_string(cfg.layer_kinds[i]);
  }
  return s;
}

std::string variant_name(const ModelConfig& cfg) {
  bool any_gauss = false, any_ind = false;
  for (auto k : cfg.layer_kinds) {
    any_gauss |= has_gaussian(k);
    any_ind |= has_indicators(k);
  }
  if (any_gauss && any_ind) return "SB-GRU";
  if (any_ind) return "GRU_BP";
  if (any_gauss) return "GRU_repar";
  return "Baseline";
}

}  // namespace

int cmd_train(const std::filesystem::path& config, const std::filesystem::path& resume, std::ostream& out) {
  require_file(config, "config file");
  RunConfig rc = load_config(config);
  apply_seed_env(rc);
  out << describe_hyperparameters(rc) << "\n";
  if (rc.train_corpus.empty()) throw std::runtime_error("config does not set train_corpus");
  require_file(rc.train_corpus, "training corpus");
  const ParallelCorpus train_set = load_corpus(rc.train_corpus, Split::train);
  std::optional<ParallelCorpus> dev;
  if (!rc.dev_corpus.empty()) {
    require_file(rc.dev_corpus, "dev corpus");
    dev = load_corpus(rc.dev_corpus, Split::dev);
  }

  TrainConfig tc = rc.train;
  tc.progress = &out;
  TrainResult result;
  if (!resume.empty()) {
    require_file(resume, "checkpoint");
    const Checkpoint ck = read_checkpoint(resume);
    LoadedModel lm = load_model(ck);
    const ResumeState rs = resume_state(ck, lm.model);
    out << "resuming at step " << rs.step << "\n";
    result = train(lm.model, lm.src_vocab, lm.tgt_vocab, train_set, dev ? &*dev : nullptr, tc, &rs);
  } else {
    const Vocab src = Vocab::build(sources(train_set), rc.min_freq);
    const Vocab tgt = Vocab::build(targets(train_set), rc.min_freq);
    ModelConfig mc = rc.model;
    mc.src_vocab_size = src.size();
    mc.tgt_vocab_size = tgt.size();
    mc.layer_kinds = rc.resolved_kinds();
    mc.validate();
    out << "corpus " << train_set.size() << " pairs; vocab src " << src.size() << " (" << src.singletons()
        << " singletons), tgt " << tgt.size() << " (" << tgt.singletons() << " singletons)\n";
    RngStream init_rng = RngStream(tc.seed).split(0);
    Seq2SeqModel model(mc, init_rng);
    result = train(model, src, tgt, train_set, dev ? &*dev : nullptr, tc);
  }
  out << "trained " << result.steps_run << " steps (final step " << result.final_step << ")"
      << (result.stopped_early ? ", stopped early" : "") << "; best dev BLEU-4 " << result.best_dev_bleu
      << " at step " << result.best_step << "\n";
  out << "wrote " << (rc.out_dir / "best.ckpt").string() << " and " << (rc.out_dir / "last.ckpt").string() << "\n";
  return 0;
}

int cmd_translate(const std::filesystem::path& checkpoint, const std::filesystem::path& input, double tau,
                  std::ostream& out) {
  require_file(checkpoint, "checkpoint");
  require_file(input, "input file");
  const LoadedModel lm = load_model(read_checkpoint(checkpoint));
  std::ifstream in(input, std::ios::binary);
  std::vector<Sentence> srcs;
  std::string line;
  while (std::getline(in, line)) srcs.push_back(tokenize(line));
  for (const auto& hyp : translate(lm.model, lm.src_vocab, lm.tgt_vocab, srcs, tau)) out << join(hyp) << "\n";
  return 0;
}

int cmd_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& corpus, double tau,
                 std::ostream& out) {
  require_file(checkpoint, "checkpoint");
  require_file(corpus, "corpus");
  const LoadedModel lm = load_model(read_checkpoint(checkpoint));
  const ParallelCorpus data = load_corpus(corpus, Split::dev);
  const auto refs = targets(data);
  const auto hyps = translate(lm.model, lm.src_vocab, lm.tgt_vocab, sources(data), tau);
  std::size_t hyp_tokens = 0, ref_tokens = 0;
  for (const auto& h : hyps) hyp_tokens += h.size();
  for (const auto& r : refs) ref_tokens += r.size();
  const double ppl = perplexity(lm.model, batchify(data, 32, lm.src_vocab, lm.tgt_vocab), tau);
  char buf[64];
  out << "variant " << variant_name(lm.model.config()) << "\n";
  out << "layer_kinds " << kinds_summary(lm.model.config()) << "\n";
  out << "sentences " << data.size() << "\n";
  out << "hypothesis_tokens " << hyp_tokens << "\n";
  out << "reference_tokens " << ref_tokens << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", bleu4(hyps, refs));
  out << "BLEU-4 " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.4f", corpus_rouge_l(hyps, refs));
  out << "ROUGE-L " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.6f", ppl);
  out << "perplexity " << buf << "\n";
  return 0;
}

int cmd_compress(const std::filesystem::path& checkpoint, double tau, const std::string& delta_mode, double delta,
                 const std::filesystem::path& out_path, std::ostream& out) {
  require_file(checkpoint, "checkpoint");
  CompressOptions opts;
  opts.tau = tau;
  opts.delta_mode = parse_delta_mode(delta_mode);
  if (delta > 0.0) {
    opts.delta_mode = DeltaMode::fixed;
    opts.fixed_delta = delta;
  } else if (opts.delta_mode == DeltaMode::fixed) {
    throw ContractError("--delta-mode fixed needs --delta");
  }
  const CompressResult r = compress(read_checkpoint(checkpoint), opts);
  write_checkpoint(out_path, r.checkpoint);
  out << format_report(r.report);
  out << "wrote " << out_path.string() << "\n";
  return 0;
}

int cmd_inspect(const std::filesystem::path& checkpoint, double tau, std::ostream& out) {
  require_file(checkpoint, "checkpoint");
  const Checkpoint ck = read_checkpoint(checkpoint);
  out << "format " << kCheckpointMagic << " version " << ck.version << "\n";
  out << "metadata\n";
  for (const auto& [k, v] : ck.metadata) {
    if (k == "vocab.src" || k == "vocab.tgt") {
      out << "  " << k << " (" << tokenize(v).size() << " tokens)\n";
    } else {
      out << "  " << k << " = " << v << "\n";
    }
  }
  out << "tensors " << ck.tensors.size() << "\n";
  for (const auto& t : ck.tensors) {
    out << "  " << t.name << " " << shape_str(t.shape) << " " << to_string(t.encoding);
    if (t.encoding == Encoding::grid)
      out << " bits=" << int(t.grid.bits) << " delta=" << format_double(t.grid.delta)
          << " min_index=" << t.grid.min_index;
    if (!t.mask.empty()) out << " mask=" << t.mask;
    out << " bytes=" << t.payload.size() << "\n";
  }

  const LoadedModel lm = load_model(ck);
  const Seq2SeqModel& m = lm.model;
  for (std::size_t i = 0; i < m.num_layers(); ++i) {
    const SBGRUCell& cell = m.layer(i);
    const std::string name = m.layer_name(i);
    out << "layer " << name << " kind " << to_string(cell.kind) << "\n";
    if (!has_indicators(cell.kind)) continue;
    std::vector<std::uint8_t> mask;
    if (cell.fixed_mask) {
      mask = *cell.fixed_mask;
      out << "  stored mask\n";
    } else {
      const Tensor pi = cell.indicators.pi_tilde();
      mask = prune_mask(pi.data(), tau);
      std::vector<std::size_t> bins(10, 0);
      for (double p : pi.data()) ++bins[std::min<std::size_t>(9, static_cast<std::size_t>(p * 10.0))];
      out << "  pi_tilde histogram\n";
      char buf[96];
      for (std::size_t b = 0; b < bins.size(); ++b) {
        std::snprintf(buf, sizeof buf, "    [%.1f, %.1f%c %zu\n", b / 10.0, (b + 1) / 10.0, b == 9 ? ']' : ')',
                      bins[b]);
        out << buf;
      }
    }
    const auto kept = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
    char buf[128];
    std::snprintf(buf, sizeof buf, "  sparsity %.6f (retained %zu of %zu, tau %g)\n",
                  1.0 - static_cast<double>(kept) / static_cast<double>(mask.size()), kept, mask.size(), tau);
    out << buf;
    const auto profile = expected_stick_profile(cell);
    bool monotone = true;
    for (std::size_t k = 1; k < profile.size(); ++k) monotone &= profile[k] <= profile[k - 1];
    out << "  stick profile (" << (monotone ? "nonincreasing" : "NOT nonincreasing") << ")";
    for (double p : profile) out << " " << format_double(p);
    out << "\n";
  }
  return 0;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stick-breaking GRU gloss-to-text translation", "sbgru"};
  app.require_subcommand(1);
  std::filesystem::path config, resume, checkpoint, input, corpus, out_path;
  double tau = kDefaultTau, delta = 0.0;
  std::string delta_mode = "mean-sigma";

  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", config, "Config file")->required();
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* tr = app.add_subcommand("translate", "Translate one gloss sentence per line");
  tr->add_option("--checkpoint", checkpoint)->required();
  tr->add_option("--input", input)->required();
  tr->add_option("--tau", tau, "Pruning threshold");

  auto* ev = app.add_subcommand("evaluate", "BLEU-4 and ROUGE-L on a corpus");
  ev->add_option("--checkpoint", checkpoint)->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--tau", tau, "Pruning threshold");

  auto* cp = app.add_subcommand("compress", "Prune and quantize stochastic layers");
  cp->add_option("--checkpoint", checkpoint)->required();
  cp->add_option("--tau", tau, "Pruning threshold")->required();
  cp->add_option("--delta-mode", delta_mode, "mean-sigma|mean-var");
  cp->add_option("--delta", delta, "Fixed grid step (overrides --delta-mode)");
  cp->add_option("--out", out_path)->required();

  auto* in = app.add_subcommand("inspect", "Summarize a checkpoint");
  in->add_option("--checkpoint", checkpoint)->required();
  in->add_option("--tau", tau, "Pruning threshold for sparsity");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return e.get_exit_code() ? e.get_exit_code() : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config, resume, out);
    if (tr->parsed()) return cmd_translate(checkpoint, input, tau, out);
    if (ev->parsed()) return cmd_evaluate(checkpoint, corpus, tau, out);
    if (cp->parsed()) return cmd_compress(checkpoint, tau, delta_mode, delta, out_path, out);
    if (in->parsed()) return cmd_inspect(checkpoint, tau, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace sbgru::cli
