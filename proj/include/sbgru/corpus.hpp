#pragma once

// Parallel gloss→text corpora: one `gloss side<TAB>text side` pair per line,
// whitespace tokenized, case preserved.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sbgru/model.hpp"

namespace sbgru {

inline constexpr std::size_t kPad = 0;
inline constexpr std::size_t kBos = 1;
inline constexpr std::size_t kEos = 2;
inline constexpr std::size_t kUnk = 3;
inline constexpr std::size_t kNumReserved = 4;

using Sentence = std::vector<std::string>;

enum class Split { train, dev, test };

struct SentencePair {
  Sentence src;
  Sentence tgt;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  Split split = Split::train;

  std::size_t size() const { return pairs.size(); }
};

Sentence tokenize(std::string_view line);
std::string join(const Sentence& tokens);

ParallelCorpus load_corpus(const std::filesystem::path& path, Split split = Split::train);
/// Same format from an in-memory string; `origin` names it in error messages.
ParallelCorpus parse_corpus(std::string_view text, const std::string& origin, Split split = Split::train);

class Vocab {
 public:
  Vocab();

  /// Tokens with count ≥ min_freq, most frequent first, ties in byte order.
  static Vocab build(const std::vector<Sentence>& sentences, std::size_t min_freq = 1);
  /// Rebuild from an id-ordered token list (reserved entries included).
  static Vocab from_tokens(std::vector<std::string> tokens, std::size_t min_freq = 1);

  std::size_t size() const { return itos_.size(); }
  std::size_t min_freq() const { return min_freq_; }
  /// Tokens that occurred exactly once in the data the vocab was built from.
  std::size_t singletons() const { return singletons_; }

  std::size_t id(std::string_view token) const;
  const std::string& token(std::size_t id) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return itos_; }

  std::vector<std::size_t> encode(const Sentence& s) const;
  /// Drops PAD/BOS/EOS; UNK stays visible as "<unk>".
  Sentence decode(std::span<const std::size_t> ids) const;

 private:
  std::vector<std::string> itos_;
  std::map<std::string, std::size_t, std::less<>> stoi_;
  std::size_t min_freq_ = 1;
  std::size_t singletons_ = 0;
};

std::vector<Sentence> sources(const ParallelCorpus& c);
std::vector<Sentence> targets(const ParallelCorpus& c);

/// Length-bucketed, PAD-filled batches with BOS/EOS framing on targets.
std::vector<Batch> batchify(const ParallelCorpus& corpus, std::size_t batch_size, const Vocab& src_vocab,
                            const Vocab& tgt_vocab);

}  // namespace sbgru
