#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffmt/model.hpp"
#include "diffmt/schedule.hpp"
#include "diffmt/tokenizer.hpp"

namespace diffmt {

/// How the clean sequence is read out at t = 1.
enum class DecodeMode {
  ArgmaxFinal,  // most likely token of x0_hat per position
  Sample,       // draw from q(x_0 | x_1, x0_hat)
};

DecodeMode parse_decode_mode(std::string_view name);
std::string_view to_string(DecodeMode mode);

struct TranslationRequest {
  std::string text;
  std::string src_lang;
  std::string tgt_lang;
  /// Seeds this example's private random stream.
  std::uint64_t seed = 0;
};

struct Translation {
  std::string text;
  TokenSequence ids;
};

struct SamplerOptions {
  DecodeMode mode = DecodeMode::ArgmaxFinal;
  /// Examples denoised together per forward call.
  int max_batch = 256;
  /// Called with (t, sequences) for every intermediate y_t, t = T..1.
  std::function<void(int, std::span<const Token>)> observer;
};

/// Reverse diffusion: y_T ~ Uniform(K)^L, then for t = T..2
/// y_{t-1} ~ q(y_{t-1} | y_t, x0_hat(y_t, x, t)), and a final readout of
/// x0_hat(y_1, x, 1). Exactly T predictor calls per chunk of examples; each
/// example's draws come only from its own seed.
std::vector<Translation> translate_batch(std::span<const TranslationRequest> requests, const X0Predictor& model,
                                         const Vocabulary& vocab, const NoiseSchedule& sched,
                                         const SamplerOptions& options = {});

Translation translate(const TranslationRequest& request, const X0Predictor& model, const Vocabulary& vocab,
                      const NoiseSchedule& sched, const SamplerOptions& options = {});

}  // namespace diffmt
