#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sbgru/errors.hpp"
#include "sbgru/trainer.hpp"

using namespace sbgru;

namespace {

const char* kToy =
    "MORGEN REGEN\tmorgen regen\n"
    "HEUTE SONNE\theute sonne\n"
    "MORGEN SONNE NORD\tmorgen im norden sonne\n"
    "HEUTE REGEN SUED\theute im sueden regen\n"
    "WIND NORD\twind im norden\n"
    "SONNE\tsonne\n";

struct Toy {
  ParallelCorpus corpus = parse_corpus(kToy, "toy");
  Vocab src = Vocab::build(sources(corpus));
  Vocab tgt = Vocab::build(targets(corpus));

  Seq2SeqModel model(LayerKind kind, std::uint64_t seed = 1) const {
    ModelConfig c;
    c.src_vocab_size = src.size();
    c.tgt_vocab_size = tgt.size();
    c.hidden_units = 8;
    c.embed_dim = 6;
    c.enc_layers = 1;
    c.dec_layers = 1;
    c.layer_kinds = {kind, LayerKind::plain};
    c.max_decode_len = 8;
    RngStream rng = RngStream(seed).split(0);
    return Seq2SeqModel(c, rng);
  }
};

TrainConfig quick_config(std::uint64_t steps) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = steps;
  cfg.eval_every = 5;
  cfg.patience = 0;
  cfg.learning_rate = 1e-2;
  return cfg;
}

bool same_parts(const ElboBreakdown& a, const ElboBreakdown& b) {
  return a.nll == b.nll && a.kl_w == b.kl_w && a.kl_z == b.kl_z && a.kl_u == b.kl_u && a.lambda == b.lambda;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("adam: zero gradient is a fixed point") {
    std::vector<double> p{1.0, -2.0, 3.0};
    const std::vector<double> g(3, 0.0);
    AdamState st;
    adam_step({std::span<double>(p)}, {std::span<const double>(g)}, st, 0.1);
    CHECK(p == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(st.step == 1);
  }

  TEST_CASE("adam: first step moves by lr against the gradient sign") {
    std::vector<double> p{1.0, 1.0, 1.0};
    const std::vector<double> g{5.0, -0.3, 1e-2};
    AdamState st;
    adam_step({std::span<double>(p)}, {std::span<const double>(g)}, st, 1e-3);
    for (std::size_t i = 0; i < 3; ++i) {
      const double expected = 1.0 - 1e-3 * g[i] / (std::abs(g[i]) + 1e-8);
      CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("adam: shape mismatch and unstarted state") {
    std::vector<double> p(3, 0.0);
    const std::vector<double> g(2, 1.0);
    AdamState st;
    CHECK_THROWS_AS(adam_step({std::span<double>(p)}, {std::span<const double>(g)}, st, 0.1), ShapeError);
    AdamState fresh;
    const std::vector<double> g3(3, 1.0);
    CHECK_THROWS_AS(adam_update(p, g3, fresh, 0, 0.1), ContractError);
  }

  TEST_CASE("global norm clipping") {
    std::vector<std::vector<double>> g{{3.0, 4.0}};
    CHECK(clip_global_norm(g, 1.0) == 5.0);
    CHECK(g[0][0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(g[0][1] == doctest::Approx(0.8).epsilon(1e-15));
    std::vector<std::vector<double>> small{{0.1, 0.2}, {0.3}};
    const auto copy = small;
    clip_global_norm(small, 5.0);
    CHECK(small == copy);
    std::vector<std::vector<double>> zero{{0.0, 0.0}};
    CHECK(clip_global_norm(zero, 1.0) == 0.0);
    CHECK(zero[0] == std::vector<double>{0.0, 0.0});
  }

  TEST_CASE("training is bitwise reproducible and leaves the data alone") {
    const Toy toy;
    const auto src_before = sources(toy.corpus);
    const auto tokens_before = toy.tgt.tokens();
    Seq2SeqModel a = toy.model(LayerKind::sb), b = toy.model(LayerKind::sb);
    const auto ra = train(a, toy.src, toy.tgt, toy.corpus, nullptr, quick_config(15));
    const auto rb = train(b, toy.src, toy.tgt, toy.corpus, nullptr, quick_config(15));
    REQUIRE(ra.history.size() == 15);
    REQUIRE(rb.history.size() == 15);
    for (std::size_t i = 0; i < 15; ++i) {
      CHECK(ra.history[i].step == i);
      CHECK(same_parts(ra.history[i].parts, rb.history[i].parts));
      CHECK(ra.history[i].parts.kl_z > 0.0);
    }
    CHECK(serialize(ra.last) == serialize(rb.last));
    CHECK(sources(toy.corpus) == src_before);
    CHECK(toy.tgt.tokens() == tokens_before);

    TrainConfig other = quick_config(15);
    other.seed = 2;
    Seq2SeqModel c = toy.model(LayerKind::sb);
    const auto rc = train(c, toy.src, toy.tgt, toy.corpus, nullptr, other);
    CHECK_FALSE(same_parts(rc.history[3].parts, ra.history[3].parts));
  }

  TEST_CASE("resuming from a checkpoint reproduces the trajectory") {
    const Toy toy;
    Seq2SeqModel full = toy.model(LayerKind::sb);
    const auto whole = train(full, toy.src, toy.tgt, toy.corpus, nullptr, quick_config(20));

    Seq2SeqModel first = toy.model(LayerKind::sb);
    const auto head = train(first, toy.src, toy.tgt, toy.corpus, nullptr, quick_config(8));
    LoadedModel lm = load_model(deserialize(serialize(head.last)));
    const ResumeState rs = resume_state(head.last, lm.model);
    CHECK(rs.step == 8);
    const auto tail = train(lm.model, lm.src_vocab, lm.tgt_vocab, toy.corpus, nullptr, quick_config(20), &rs);
    REQUIRE(tail.history.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK(tail.history[i].step == whole.history[8 + i].step);
      CHECK(same_parts(tail.history[i].parts, whole.history[8 + i].parts));
    }
    auto pa = full.parameters();
    auto pb = lm.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].second->value() == pb[i].second->value());
  }

  TEST_CASE("metric log and checkpoints on disk") {
    const Toy toy;
    const auto dir = std::filesystem::temp_directory_path() / "sbgru_trainer_test";
    std::filesystem::remove_all(dir);
    TrainConfig cfg = quick_config(12);
    cfg.out_dir = dir;
    cfg.log_path = dir / "logs" / "metrics.tsv";
    Seq2SeqModel m = toy.model(LayerKind::repar);
    const auto r = train(m, toy.src, toy.tgt, toy.corpus, &toy.corpus, cfg);
    CHECK(std::filesystem::exists(dir / "last.ckpt"));
    CHECK(std::filesystem::exists(dir / "best.ckpt"));
    CHECK(read_checkpoint(dir / "last.ckpt") == r.last);

    std::ifstream in(cfg.log_path);
    std::string line;
    std::getline(in, line);
    CHECK(line == metric_log_header());
    CHECK(line == "step\tnll\tkl_w\tkl_z\tkl_u\tlambda");
    std::size_t rows = 0;
    long prev = -1;
    while (std::getline(in, line)) {
      const long step = std::stol(line.substr(0, line.find('\t')));
      CHECK(step > prev);
      CHECK(line == metric_log_row(r.history[rows]));
      prev = step;
      ++rows;
    }
    CHECK(rows == 12);
    CHECK(std::filesystem::exists(cfg.log_path.string() + ".timing"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("early stopping counts evaluations") {
    const Toy toy;
    TrainConfig cfg = quick_config(400);
    cfg.eval_every = 1;
    cfg.patience = 2;
    cfg.learning_rate = 0.0;  // dev BLEU can never improve after the first evaluation
    Seq2SeqModel m = toy.model(LayerKind::plain);
    const auto r = train(m, toy.src, toy.tgt, toy.corpus, nullptr, cfg);
    CHECK(r.stopped_early);
    CHECK(r.steps_run == 3);
    CHECK(r.best.has_value());
  }

  TEST_CASE("non-finite loss aborts with a batch dump") {
    const Toy toy;
    Seq2SeqModel m = toy.model(LayerKind::plain);
    m.projection_bias().mutable_data()[kEos] = std::nan("");
    std::ostringstream sink;
    TrainConfig cfg = quick_config(5);
    cfg.progress = &sink;
    try {
      train(m, toy.src, toy.tgt, toy.corpus, nullptr, cfg);
      FAIL("expected a numeric error");
    } catch (const NumericError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("step 0") != std::string::npos);
      CHECK(msg.find("pair ") != std::string::npos);
      CHECK(msg.find(" ||| ") != std::string::npos);
    }
  }

  TEST_CASE("perplexity and translation helpers") {
    const Toy toy;
    Seq2SeqModel m = toy.model(LayerKind::sb);
    const auto batches = batchify(toy.corpus, 4, toy.src, toy.tgt);
    const double ppl = perplexity(m, batches, 0.01);
    CHECK(std::isfinite(ppl));
    CHECK(ppl >= 1.0);
    const auto hyps = translate(m, toy.src, toy.tgt, sources(toy.corpus), 0.01);
    CHECK(hyps.size() == toy.corpus.size());
  }
}
