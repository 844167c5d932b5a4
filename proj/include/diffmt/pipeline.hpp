#pragma once

// End-to-end run over synthetic cipher languages: generate data, train,
// translate the held-out supervised and zero-shot splits, score them.
//
// Config keys (key = value, "[section]" prefixes):
//   seed
//   data.langs, data.pairs, data.zero_shot_pairs   "A,B,C" / "A-B,A-C" / "B-C"
//   data.n_per_pair, data.n_test
//   data.alphabet, data.word_order, data.min_words, data.max_words,
//   data.min_word_length, data.max_word_length, data.max_chars   (optional)
//   tokenizer.mode, tokenizer.max_size
//   schedule.kind, schedule.T
//   model.n_layers, model.n_heads, model.d_model, model.d_ff, model.L
//   train.lr, train.gamma, train.batch_size, train.epochs
//   train.max_steps, train.clip_norm, train.balance, train.log_every  (optional)
//   translate.mode, translate.max_batch                                (optional)

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "diffmt/config.hpp"
#include "diffmt/corpus.hpp"
#include "diffmt/metrics.hpp"
#include "diffmt/model.hpp"
#include "diffmt/sampler.hpp"
#include "diffmt/schedule.hpp"
#include "diffmt/tokenizer.hpp"
#include "diffmt/trainer.hpp"

namespace diffmt {

struct DataSettings {
  std::vector<std::string> langs;
  std::vector<LanguagePair> pairs;
  std::vector<LanguagePair> zero_shot_pairs;
  std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  /// One entry per language, or empty for identity order everywhere.
  std::vector<WordOrder> word_order;
  int n_per_pair = 1000;
  int n_test = 200;
  int min_words = 1;
  int max_words = 4;
  int min_word_length = 1;
  int max_word_length = 5;
  int max_chars = 14;
  std::uint64_t seed = 0;
};

struct GeneratedData {
  std::vector<CipherLanguage> languages;
  /// One list per trained direction.
  std::vector<std::vector<ParallelExample>> train;
  std::vector<std::vector<ParallelExample>> test;
  std::vector<std::vector<ParallelExample>> zero_shot;
};

/// Reads the data.* keys.
DataSettings data_settings(const Config& cfg, std::uint64_t seed);

/// "A-B" -> {A, B}.
LanguagePair parse_language_pair(const std::string& text);

/// Cipher i is drawn from mix_seed(seed, i); train and test sentences come
/// from independent streams of the same seed.
GeneratedData generate_data(const DataSettings& settings);

/// Writes train.jsonl, test.jsonl, zero_shot.jsonl and languages.json.
void write_data_dir(const std::string& dir, const GeneratedData& data);

/// Groups examples by direction, in order of first appearance.
std::vector<std::vector<ParallelExample>> group_by_direction(const std::vector<ParallelExample>& examples);

struct PipelineSettings {
  std::uint64_t seed = 0;
  DataSettings data;
  TokenizerMode tokenizer_mode = TokenizerMode::Char;
  int vocab_max_size = 64;
  ScheduleKind schedule_kind = ScheduleKind::Cosine;
  int steps = 100;
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 256;
  int seq_len = 16;
  TrainConfig train;
  DecodeMode decode_mode = DecodeMode::ArgmaxFinal;
  int max_batch = 256;

  /// Throws InvalidArgument naming the first missing or malformed key. The
  /// data.* keys are read only with `with_data`.
  static PipelineSettings from_config(const Config& cfg, bool with_data = true);
  ModelConfig model_config(int vocab_size) const;
};

struct DirectionScore {
  std::string src_lang;
  std::string tgt_lang;
  int n = 0;
  double bleu = 0;
  double ter = 0;
  double chrf = 0;
  /// chrF of the untrained (initial) parameters; zero-shot rows only.
  double baseline_chrf = 0;
};

struct PipelineReport {
  std::vector<DirectionScore> supervised;
  std::vector<DirectionScore> zero_shot;

  /// Stable JSON text; byte-identical for identical runs.
  std::string to_json() const;
};

/// Builds the vocabulary over every training text on both sides.
Vocabulary build_vocabulary(const std::vector<std::vector<ParallelExample>>& train, TokenizerMode mode,
                            int max_size, const std::vector<std::string>& langs);

/// Translates one direction's examples; example i uses seed mix_seed(seed, i).
std::vector<std::string> translate_examples(const std::vector<ParallelExample>& examples, const X0Predictor& model,
                                            const Vocabulary& vocab, const NoiseSchedule& sched,
                                            const SamplerOptions& options, std::uint64_t seed);

/// Scores hypotheses for one direction.
DirectionScore score_direction(const std::vector<ParallelExample>& examples, const std::vector<std::string>& hyps);

/// Runs every stage, writing artifacts under `out_dir`:
///   data/, model/ (trainer files), translations/<src>-<tgt>.jsonl,
///   report.json.
PipelineReport run_pipeline(const PipelineSettings& settings, const std::string& out_dir,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace diffmt
