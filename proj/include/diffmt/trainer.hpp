#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffmt/corpus.hpp"
#include "diffmt/model.hpp"
#include "diffmt/schedule.hpp"
#include "diffmt/tokenizer.hpp"

namespace diffmt {

struct TrainConfig {
  double lr = 1e-3;
  double gamma = 0.9;  // per-epoch learning-rate multiplier
  int batch_size = 64;
  int epochs = 10;
  /// Stop after this many optimizer steps in total (0: no limit).
  long max_steps = 0;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip (0 disables).
  double clip_norm = 1.0;
  /// Downsample every dataset to the smallest one each epoch.
  bool balance = true;
  /// Write a log line every this many steps (the last step of an epoch is
  /// always logged).
  int log_every = 1;

  void validate() const;
};

struct OptimizerState {
  std::vector<Matrix<float>> first_moment;
  std::vector<Matrix<float>> second_moment;
  long step = 0;

  static OptimizerState zeros(const DenoiserParams<float>& params);
};

/// Encoded, corrupted batch ready for the denoiser.
struct NoisyBatch {
  DenoiserInput input;
  std::vector<Token> clean;
};

/// Encodes both sides, draws t ~ Uniform{1..T} per example and corrupts every
/// target position independently with q(y_t | y_0).
NoisyBatch make_noisy_batch(std::span<const ParallelExample> examples, const Vocabulary& vocab,
                            const ModelConfig& cfg, const NoiseSchedule& sched, Rng& rng);

/// Clips to `clip_norm` (if positive) and applies one bias-corrected Adam
/// update. Returns the global gradient norm before clipping.
double adam_update(DenoiserParams<float>& params, DenoiserParams<float>& grad, OptimizerState& opt,
                   const TrainConfig& cfg, double lr);

struct StepResult {
  double loss = 0;
  double mean_t = 0;
  double grad_norm = 0;
  std::vector<int> steps;
};

StepResult train_step(std::span<const ParallelExample> batch, const Vocabulary& vocab, DenoiserParams<float>& params,
                      OptimizerState& opt, const ModelConfig& model_cfg, const TrainConfig& train_cfg, double lr,
                      const NoiseSchedule& sched, Rng& rng);

/// Monte-Carlo estimate of the full negative bound for one example: every
/// term t = 1..T (one corruption sample each) plus the prior KL.
double estimate_full_bound(const DenoiserParams<float>& params, const ModelConfig& cfg, const NoiseSchedule& sched,
                           const Vocabulary& vocab, const ParallelExample& example, Rng& rng);

struct TrainLogEntry {
  long step = 0;
  int epoch = 0;
  double loss = 0;
  double lr = 0;
  double t_mean = 0;
};

struct TrainResult {
  DenoiserParams<float> params;
  OptimizerState optimizer;
  std::vector<TrainLogEntry> log;  // entries written during this call
  int next_epoch = 0;
  double lr = 0;
};

/// Parameters a fresh run starts from (seeded by train_cfg.seed).
DenoiserParams<float> initial_params(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

/// Files written into the output directory.
struct TrainFiles {
  static constexpr const char* kCheckpoint = "model.ckpt";
  static constexpr const char* kState = "train_state.bin";
  static constexpr const char* kLog = "train_log.jsonl";
  static constexpr const char* kVocab = "vocab.txt";
};

/// Epoch loop: learning rate lr * gamma^epoch, checkpoint + resumable state
/// after every epoch, one JSONL log line per logged step. With `resume`, the
/// state in `out_dir` is loaded and training continues at its next epoch.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const NoiseSchedule& sched,
                  const Vocabulary& vocab, const std::vector<std::vector<ParallelExample>>& datasets,
                  const std::string& out_dir, bool resume = false,
                  const std::function<void(const TrainLogEntry&)>& on_log = {});

void save_train_state(const std::string& path, const ModelConfig& cfg, const DenoiserParams<float>& params,
                      const OptimizerState& opt, int next_epoch, double lr);

struct TrainState {
  ModelConfig config;
  DenoiserParams<float> params;
  OptimizerState optimizer;
  int next_epoch = 0;
  double lr = 0;
};
TrainState load_train_state(const std::string& path);

}  // namespace diffmt
