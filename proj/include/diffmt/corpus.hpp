#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "diffmt/common.hpp"

namespace diffmt {

struct ParallelExample {
  std::string src_text;
  std::string tgt_text;
  std::string src_lang;
  std::string tgt_lang;

  bool operator==(const ParallelExample&) const = default;
};

enum class WordOrder { Identity, Reverse };

WordOrder parse_word_order(std::string_view name);
std::string_view to_string(WordOrder order);

/// Synthetic language: a bijection over a base alphabet plus a word-order rule.
class CipherLanguage {
 public:
  /// Identity mapping.
  CipherLanguage(std::string tag, std::string alphabet, WordOrder order = WordOrder::Identity);
  /// `image[i]` is the surface symbol for `alphabet[i]`; must be a permutation
  /// of `alphabet`.
  CipherLanguage(std::string tag, std::string alphabet, std::string image, WordOrder order);
  /// Uniformly random permutation drawn from `seed`.
  static CipherLanguage random(std::string tag, std::string alphabet, std::uint64_t seed,
                               WordOrder order = WordOrder::Identity);

  const std::string& tag() const { return tag_; }
  const std::string& alphabet() const { return alphabet_; }
  const std::string& image() const { return image_; }
  WordOrder order() const { return order_; }

  /// Base sentence -> surface form. Characters outside the alphabet pass
  /// through unchanged.
  std::string encipher(std::string_view base) const;
  /// Surface form -> base sentence.
  std::string decipher(std::string_view surface) const;

 private:
  std::string tag_;
  std::string alphabet_;
  std::string image_;
  WordOrder order_;
  std::array<char, 256> forward_{};
  std::array<char, 256> inverse_{};
};

struct LanguagePair {
  std::string src;
  std::string tgt;
};

struct CipherCorpusRequest {
  std::vector<CipherLanguage> languages;
  /// Trained pairs; both directions are emitted for each.
  std::vector<LanguagePair> pairs;
  /// Held-out pairs; both directions, written to the zero-shot split.
  std::vector<LanguagePair> zero_shot_pairs;
  int n_per_pair = 100;
  int min_words = 1;
  int max_words = 4;
  int min_word_length = 1;
  int max_word_length = 5;
  /// Sentences never exceed this many characters (including spaces).
  int max_chars = 30;
  std::uint64_t seed = 0;
};

struct CipherCorpus {
  /// One list per trained direction, in request order (p.src->p.tgt, then
  /// p.tgt->p.src).
  std::vector<std::vector<ParallelExample>> directions;
  std::vector<std::vector<ParallelExample>> zero_shot_directions;

  std::vector<ParallelExample> flat_train() const;
  std::vector<ParallelExample> flat_zero_shot() const;
};

/// Random base sentences rendered in each language of every pair. A base
/// sentence is shared by both directions of a pair.
CipherCorpus gen_cipher_corpus(const CipherCorpusRequest& request);

/// Random base sentence over `alphabet`.
std::string random_base_sentence(const CipherCorpusRequest& request, const std::string& alphabet,
                                 Rng& rng);

struct LoadDiagnostic {
  int line = 0;
  std::string message;
};

struct LoadResult {
  std::vector<ParallelExample> examples;
  std::vector<LoadDiagnostic> diagnostics;
};

/// Reads JSONL lines {"src", "tgt", "src_lang"?, "tgt_lang"?}. Missing tags
/// fall back to the given defaults. Malformed lines are reported and skipped;
/// throws IoError if the file is missing or every non-empty line is bad.
LoadResult load_parallel_file(const std::string& path, std::string_view default_src_lang = {},
                              std::string_view default_tgt_lang = {});

void save_parallel_file(const std::string& path, const std::vector<ParallelExample>& examples);

/// One epoch's example stream. With `balance`, every dataset is subsampled to
/// the size of the smallest one, freshly for each epoch. Order is shuffled
/// deterministically from (seed, epoch).
std::vector<ParallelExample> make_epoch(const std::vector<std::vector<ParallelExample>>& datasets,
                                        bool balance, std::uint64_t seed, std::uint64_t epoch);

}  // namespace diffmt
