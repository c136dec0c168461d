#include "sbgru/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sbgru/errors.hpp"

namespace sbgru {

namespace {

const std::vector<std::string> kReserved{"<pad>", "<s>", "</s>", "<unk>"};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

Sentence tokenize(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    const std::size_t start = i;
    while (i < line.size() && !is_space(line[i])) ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::string join(const Sentence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

ParallelCorpus parse_corpus(std::string_view text, const std::string& origin, Split split) {
  ParallelCorpus corpus;
  corpus.split = split;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos) throw ParseError(origin, line_no, "missing tab between gloss and text");
    SentencePair p{tokenize(line.substr(0, tab)), tokenize(line.substr(tab + 1))};
    if (p.src.empty()) throw ParseError(origin, line_no, "empty gloss side");
    if (p.tgt.empty()) throw ParseError(origin, line_no, "empty text side");
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

ParallelCorpus load_corpus(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read corpus file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str(), path.string(), split);
}

Vocab::Vocab() : itos_(kReserved) {
  for (std::size_t i = 0; i < itos_.size(); ++i) stoi_.emplace(itos_[i], i);
}

Vocab Vocab::build(const std::vector<Sentence>& sentences, std::size_t min_freq) {
  if (sentences.empty()) throw ContractError("build_vocab: empty corpus");
  std::map<std::string, std::size_t, std::less<>> counts;
  for (const auto& s : sentences)
    for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  Vocab v;
  v.min_freq_ = min_freq;
  for (const auto& [tok, n] : ranked) {
    if (n == 1) ++v.singletons_;
    if (n < min_freq || v.stoi_.count(tok)) continue;
    v.stoi_.emplace(tok, v.itos_.size());
    v.itos_.push_back(tok);
  }
  return v;
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens, std::size_t min_freq) {
  if (tokens.size() < kNumReserved || !std::equal(kReserved.begin(), kReserved.end(), tokens.begin()))
    throw FormatError("vocabulary does not start with the reserved tokens");
  Vocab v;
  v.min_freq_ = min_freq;
  v.itos_ = std::move(tokens);
  v.stoi_.clear();
  for (std::size_t i = 0; i < v.itos_.size(); ++i)
    if (!v.stoi_.emplace(v.itos_[i], i).second) throw FormatError("duplicate vocabulary token '" + v.itos_[i] + "'");
  return v;
}

std::size_t Vocab::id(std::string_view token) const {
  auto it = stoi_.find(token);
  return it == stoi_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const { return itos_.at(id); }

bool Vocab::contains(std::string_view token) const { return stoi_.find(token) != stoi_.end(); }

std::vector<std::size_t> Vocab::encode(const Sentence& s) const {
  std::vector<std::size_t> ids;
  ids.reserve(s.size());
  for (const auto& t : s) ids.push_back(id(t));
  return ids;
}

Sentence Vocab::decode(std::span<const std::size_t> ids) const {
  Sentence out;
  for (std::size_t i : ids)
    if (i != kPad && i != kBos && i != kEos) out.push_back(token(i));
  return out;
}

std::vector<Sentence> sources(const ParallelCorpus& c) {
  std::vector<Sentence> out;
  for (const auto& p : c.pairs) out.push_back(p.src);
  return out;
}

std::vector<Sentence> targets(const ParallelCorpus& c) {
  std::vector<Sentence> out;
  for (const auto& p : c.pairs) out.push_back(p.tgt);
  return out;
}

std::vector<Batch> batchify(const ParallelCorpus& corpus, std::size_t batch_size, const Vocab& src_vocab,
                            const Vocab& tgt_vocab) {
  if (batch_size == 0) throw ContractError("batchify: batch_size must be positive");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.pairs[a].src.size() < corpus.pairs[b].src.size();
  });
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, order.size() - start);
    Batch b;
    b.size = n;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = corpus.pairs[order[start + i]];
      b.src_len = std::max(b.src_len, p.src.size());
      b.tgt_len = std::max(b.tgt_len, p.tgt.size() + 1);
    }
    b.src.assign(n * b.src_len, kPad);
    b.src_mask.assign(n * b.src_len, 0);
    b.tgt_in.assign(n * b.tgt_len, kPad);
    b.tgt_out.assign(n * b.tgt_len, kPad);
    b.tgt_weight.assign(n * b.tgt_len, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = corpus.pairs[order[start + i]];
      b.pair_index.push_back(order[start + i]);
      const auto s = src_vocab.encode(p.src);
      for (std::size_t t = 0; t < s.size(); ++t) {
        b.src[i * b.src_len + t] = s[t];
        b.src_mask[i * b.src_len + t] = 1;
      }
      const auto y = tgt_vocab.encode(p.tgt);
      b.tgt_in[i * b.tgt_len] = kBos;
      for (std::size_t t = 0; t < y.size(); ++t) {
        b.tgt_in[i * b.tgt_len + t + 1] = y[t];
        b.tgt_out[i * b.tgt_len + t] = y[t];
        b.tgt_weight[i * b.tgt_len + t] = 1.0;
      }
      b.tgt_out[i * b.tgt_len + y.size()] = kEos;
      b.tgt_weight[i * b.tgt_len + y.size()] = 1.0;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace sbgru
