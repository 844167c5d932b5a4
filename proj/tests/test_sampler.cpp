#include "doctest.h"

#include "diffmt/sampler.hpp"

using namespace diffmt;

namespace {

Vocabulary small_vocab() { return Vocabulary::build({"abcdefgh "}, TokenizerMode::Char, 32, {"A", "B"}); }

// Always predicts the fixed sequence `target` with certainty.
class OraclePredictor final : public X0Predictor {
 public:
  OraclePredictor(int K, TokenSequence target) : K_(K), target_(std::move(target)) {}
  int vocab_size() const override { return K_; }
  int seq_len() const override { return static_cast<int>(target_.size()); }
  ProbTable predict(const DenoiserInput& input) const override {
    ++calls;
    steps_seen.push_back(input.steps.front());
    ProbTable p = ProbTable::Zero(input.batch * seq_len(), K_);
    for (int b = 0; b < input.batch; ++b) {
      for (int i = 0; i < seq_len(); ++i) p(b * seq_len() + i, target_[static_cast<std::size_t>(i)]) = 1.0;
    }
    return p;
  }
  mutable int calls = 0;
  mutable std::vector<int> steps_seen;

 private:
  int K_;
  TokenSequence target_;
};

TransformerDenoiser generic_model(const Vocabulary& vocab, int L, int T) {
  const ModelConfig cfg{1, 2, 16, 32, vocab.size(), L, T};
  auto params = DenoiserParams<float>::init(cfg, 7);
  params.out_w *= 20.0f;
  return TransformerDenoiser(cfg, params);
}

}  // namespace

TEST_CASE("decode mode names") {
  CHECK(parse_decode_mode("argmax") == DecodeMode::ArgmaxFinal);
  CHECK(parse_decode_mode("sample") == DecodeMode::Sample);
  CHECK(to_string(DecodeMode::Sample) == "sample");
  CHECK_THROWS_AS(parse_decode_mode("beam"), InvalidArgument);
}

TEST_CASE("oracle predictor: the chain lands on its target for every seed") {
  const auto vocab = small_vocab();
  const auto target = encode("bad cafe", "A", "B", vocab, 10, Side::Target);
  const auto sched = build_schedule(ScheduleKind::Cosine, 20);
  for (auto mode : {DecodeMode::ArgmaxFinal, DecodeMode::Sample}) {
    OraclePredictor oracle(vocab.size(), target);
    SamplerOptions opts;
    opts.mode = mode;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const auto out = translate({"hhh", "A", "B", seed}, oracle, vocab, sched, opts);
      CHECK(out.ids == target);
      CHECK(out.text == "bad cafe");
    }
    CHECK(oracle.calls == 100 * 20);
  }
}

TEST_CASE("exactly T predictor calls, from T down to 1") {
  const auto vocab = small_vocab();
  const TokenSequence target(6, 4);
  for (int T : {1, 2, 7}) {
    const auto sched = build_schedule(ScheduleKind::Cosine, T);
    OraclePredictor oracle(vocab.size(), target);
    const std::vector<TranslationRequest> reqs(5, TranslationRequest{"ab", "A", "B", 3});
    const auto out = translate_batch(reqs, oracle, vocab, sched);
    CHECK(out.size() == 5);
    CHECK(oracle.calls == T);
    std::vector<int> want;
    for (int t = T; t >= 1; --t) want.push_back(t);
    CHECK(oracle.steps_seen == want);
  }
  // Chunking repeats the chain per chunk.
  const auto sched = build_schedule(ScheduleKind::Cosine, 4);
  OraclePredictor oracle(vocab.size(), target);
  SamplerOptions opts;
  opts.max_batch = 2;
  const std::vector<TranslationRequest> reqs(5, TranslationRequest{"ab", "A", "B", 3});
  translate_batch(reqs, oracle, vocab, sched, opts);
  CHECK(oracle.calls == 3 * 4);
}

TEST_CASE("per-example determinism independent of batch neighbours") {
  const auto vocab = small_vocab();
  const int T = 8;
  const auto model = generic_model(vocab, 8, T);
  const auto sched = build_schedule(ScheduleKind::Cosine, T);
  const std::vector<TranslationRequest> reqs{
      {"abc", "A", "B", 1}, {"hag", "A", "B", 2}, {"abc", "A", "B", 1}, {"fed cab", "B", "A", 9}};
  for (auto mode : {DecodeMode::ArgmaxFinal, DecodeMode::Sample}) {
    SamplerOptions opts;
    opts.mode = mode;
    const auto batch = translate_batch(reqs, model, vocab, sched, opts);
    REQUIRE(batch.size() == reqs.size());
    CHECK(batch[0].ids == batch[2].ids);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
      const auto single = translate(reqs[i], model, vocab, sched, opts);
      CHECK(single.ids == batch[i].ids);
      CHECK(single.text == batch[i].text);
    }
    const auto again = translate_batch(reqs, model, vocab, sched, opts);
    for (std::size_t i = 0; i < reqs.size(); ++i) CHECK(again[i].ids == batch[i].ids);
    std::vector<TranslationRequest> reversed(reqs.rbegin(), reqs.rend());
    const auto rev = translate_batch(reversed, model, vocab, sched, opts);
    for (std::size_t i = 0; i < reqs.size(); ++i) CHECK(rev[reqs.size() - 1 - i].ids == batch[i].ids);
  }
  // A different seed gives a different chain.
  SamplerOptions sample;
  sample.mode = DecodeMode::Sample;
  bool differs = false;
  const auto base = translate({"abc", "A", "B", 1}, model, vocab, sched, sample);
  for (std::uint64_t s = 2; s < 12; ++s) differs = differs || translate({"abc", "A", "B", s}, model, vocab, sched, sample).ids != base.ids;
  CHECK(differs);
}

TEST_CASE("intermediate states hold valid ids") {
  const auto vocab = small_vocab();
  const int T = 12;
  const auto model = generic_model(vocab, 6, T);
  const auto sched = build_schedule(ScheduleKind::Cosine, T);
  SamplerOptions opts;
  int observed = 0;
  bool valid = true;
  std::vector<int> steps;
  opts.observer = [&](int t, std::span<const Token> ys) {
    ++observed;
    steps.push_back(t);
    valid = valid && ys.size() == 3u * 6u;
    for (Token y : ys) valid = valid && y >= 0 && y < vocab.size();
  };
  const std::vector<TranslationRequest> reqs{{"a", "A", "B", 1}, {"bb", "A", "B", 2}, {"ccc", "B", "A", 3}};
  const auto out = translate_batch(reqs, model, vocab, sched, opts);
  CHECK(observed == T);
  CHECK(steps.front() == T);
  CHECK(steps.back() == 1);
  CHECK(valid);
  for (const auto& tr : out) {
    CHECK(tr.ids.size() == 6u);
    for (Token y : tr.ids) CHECK((y >= 0 && y < vocab.size()));
  }
}

TEST_CASE("sampler errors") {
  const auto vocab = small_vocab();
  const auto sched = build_schedule(ScheduleKind::Cosine, 3);
  OraclePredictor wrong_k(vocab.size() + 1, TokenSequence(4, 0));
  CHECK_THROWS_AS(translate({"a", "A", "B", 0}, wrong_k, vocab, sched), InvalidArgument);
  OraclePredictor oracle(vocab.size(), TokenSequence(4, 0));
  CHECK_THROWS_AS(translate({"a", "A", "Q", 0}, oracle, vocab, sched), InvalidArgument);
  SamplerOptions opts;
  opts.max_batch = 0;
  CHECK_THROWS_AS(translate({"a", "A", "B", 0}, oracle, vocab, sched, opts), InvalidArgument);
}
