#pragma once

// Translation quality metrics. Word-level metrics split on whitespace; no
// punctuation tokenization is applied.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace diffmt {

/// Sufficient statistics for BLEU over n = 1..4.
struct BleuStats {
  static constexpr int kMaxOrder = 4;
  long matches[kMaxOrder] = {};
  long totals[kMaxOrder] = {};
  long hyp_length = 0;
  long ref_length = 0;

  BleuStats& operator+=(const BleuStats& other);
};

BleuStats bleu_stats(std::string_view hyp, std::string_view ref);

/// Unsmoothed corpus BLEU in [0, 100].
double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

/// Sentence BLEU with exponential smoothing: the k-th order with zero matches
/// gets precision 1 / (2^k * total). Only orders that exist in the hypothesis
/// are averaged (effective order).
double sentence_bleu(std::string_view hyp, std::string_view ref);

/// Translation edit rate in percent (may exceed 100). Edits are word
/// insertions, deletions, substitutions and block shifts.
double ter(std::string_view hyp, std::string_view ref);

struct TerStats {
  double edits = 0;
  double ref_length = 0;
};
TerStats ter_stats(std::string_view hyp, std::string_view ref);
/// Corpus TER: total edits / total reference words.
double corpus_ter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs);

/// Character n-gram statistics (whitespace removed) for n = 1..max_order.
struct ChrfStats {
  std::vector<long> hyp_counts;
  std::vector<long> ref_counts;
  std::vector<long> matches;

  explicit ChrfStats(int max_order = 6)
      : hyp_counts(static_cast<std::size_t>(max_order)),
        ref_counts(static_cast<std::size_t>(max_order)),
        matches(static_cast<std::size_t>(max_order)) {}
  ChrfStats& operator+=(const ChrfStats& other);
};

ChrfStats chrf_stats(std::string_view hyp, std::string_view ref, int max_order = 6);
/// Precision and recall are averaged over orders present in both strings,
/// then combined as F_beta.
double chrf_score(const ChrfStats& stats, double beta = 2.0);
double chrf(std::string_view hyp, std::string_view ref, int max_order = 6, double beta = 2.0);
double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   int max_order = 6, double beta = 2.0);

struct EvalReport {
  double corpus_bleu = 0;
  std::optional<std::vector<double>> sentence_bleu;
  double ter = 0;
  double chrf = 0;
  int n_sentences = 0;
};

struct MetricSelection {
  bool bleu = true;
  bool ter = true;
  bool chrf = true;
  bool sentence_bleu = false;
};

EvalReport evaluate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                    const MetricSelection& which = {});

/// Whitespace tokenization shared by BLEU and TER.
std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace diffmt
