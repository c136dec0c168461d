#pragma once

#include <vector>

#include "sbgru/corpus.hpp"

namespace sbgru {

struct BleuOptions {
  int max_order = 4;
  /// Add one to matched and total counts for orders ≥ 2.
  bool add_one_smoothing = false;
};

/// Corpus-level BLEU in [0, 100] with clipped n-gram precisions, geometric
/// mean and brevity penalty.
double bleu4(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
             const BleuOptions& opts = {});

/// ROUGE-L F1 (β = 1) of one hypothesis against one reference.
double rouge_l(const Sentence& hypothesis, const Sentence& reference);

/// Mean sentence ROUGE-L F1 scaled to [0, 100].
double corpus_rouge_l(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references);

}  // namespace sbgru
