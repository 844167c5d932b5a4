#include "diffmt/sampler.hpp"

#include <algorithm>

#include "diffmt/diffusion.hpp"

namespace diffmt {

DecodeMode parse_decode_mode(std::string_view name) {
  if (name == "argmax" || name == "argmax_final") return DecodeMode::ArgmaxFinal;
  if (name == "sample") return DecodeMode::Sample;
  throw InvalidArgument("unknown decode mode '" + std::string(name) + "'");
}

std::string_view to_string(DecodeMode mode) { return mode == DecodeMode::Sample ? "sample" : "argmax"; }

namespace {

void denoise_chunk(std::span<const TranslationRequest> requests, const X0Predictor& model, const Vocabulary& vocab,
                   const NoiseSchedule& sched, const SamplerOptions& options, std::vector<Translation>& out) {
  const int B = static_cast<int>(requests.size());
  const int L = model.seq_len();
  const int K = model.vocab_size();
  const auto row_len = static_cast<std::size_t>(L);

  std::vector<Rng> rngs;
  DenoiserInput in;
  in.batch = B;
  in.steps.assign(static_cast<std::size_t>(B), sched.steps());
  for (const auto& req : requests) {
    rngs.emplace_back(req.seed);
    const auto src = encode(req.text, req.src_lang, req.tgt_lang, vocab, L, Side::Source);
    in.source.insert(in.source.end(), src.begin(), src.end());
  }
  in.noisy.resize(static_cast<std::size_t>(B) * row_len);
  for (int b = 0; b < B; ++b) {
    for (std::size_t pos = 0; pos < row_len; ++pos) {
      in.noisy[b * row_len + pos] = static_cast<Token>(uniform_index(rngs[b], static_cast<std::uint64_t>(K)));
    }
  }

  for (int t = sched.steps(); t >= 1; --t) {
    if (options.observer) options.observer(t, in.noisy);
    std::fill(in.steps.begin(), in.steps.end(), t);
    const ProbTable x0_hat = model.predict(in);
    if (x0_hat.rows() != B * L || x0_hat.cols() != K || !x0_hat.allFinite()) {
      throw NumericalError("denoiser returned a malformed or non-finite prediction at t = " + std::to_string(t));
    }
    for (int b = 0; b < B; ++b) {
      for (std::size_t pos = 0; pos < row_len; ++pos) {
        const auto row = static_cast<Eigen::Index>(b * row_len + pos);
        const std::span<const double> probs(x0_hat.data() + row * K, static_cast<std::size_t>(K));
        Token& y = in.noisy[static_cast<std::size_t>(row)];
        if (t == 1 && options.mode == DecodeMode::ArgmaxFinal) {
          y = static_cast<Token>(std::max_element(probs.begin(), probs.end()) - probs.begin());
        } else {
          y = posterior_probs(y, probs, t, sched).sample(rngs[b]);
        }
      }
    }
  }

  for (int b = 0; b < B; ++b) {
    Translation tr;
    tr.ids.assign(in.noisy.begin() + static_cast<std::ptrdiff_t>(b * row_len),
                  in.noisy.begin() + static_cast<std::ptrdiff_t>((b + 1) * row_len));
    tr.text = decode(tr.ids, vocab);
    out.push_back(std::move(tr));
  }
}

}  // namespace

std::vector<Translation> translate_batch(std::span<const TranslationRequest> requests, const X0Predictor& model,
                                         const Vocabulary& vocab, const NoiseSchedule& sched,
                                         const SamplerOptions& options) {
  if (model.vocab_size() != vocab.size()) throw InvalidArgument("vocabulary size does not match the model");
  if (options.max_batch < 1) throw InvalidArgument("sampler max_batch must be >= 1");
  std::vector<Translation> out;
  out.reserve(requests.size());
  for (std::size_t start = 0; start < requests.size(); start += static_cast<std::size_t>(options.max_batch)) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(options.max_batch), requests.size() - start);
    denoise_chunk(requests.subspan(start, n), model, vocab, sched, options, out);
  }
  return out;
}

Translation translate(const TranslationRequest& request, const X0Predictor& model, const Vocabulary& vocab,
                      const NoiseSchedule& sched, const SamplerOptions& options) {
  return translate_batch(std::span(&request, 1), model, vocab, sched, options).front();
}

}  // namespace diffmt
