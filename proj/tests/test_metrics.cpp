#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "diffmt/common.hpp"
#include "diffmt/metrics.hpp"

using namespace diffmt;

namespace {

const char* kGoldenHyp = "i know he need a guarantee for four years.";
const char* kGoldenRef = "i know he would like a four - year guarantee.";

// Word-level Levenshtein distance, no shifts.
double edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::vector<int>> d(a.size() + 1, std::vector<int>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

std::string random_sentence(Rng& rng, int max_words) {
  const int n = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_words)));
  std::string s;
  for (int i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += static_cast<char>('a' + uniform_index(rng, 5));
  }
  return s;
}

}  // namespace

TEST_CASE("identical corpora score perfectly") {
  const std::vector<std::string> corpus{"the cat sat on the mat", "a b c d e", "x"};
  CHECK(corpus_bleu(corpus, corpus) == 100.0);
  CHECK(corpus_ter(corpus, corpus) == 0.0);
  CHECK(corpus_chrf(corpus, corpus) == 100.0);
  CHECK(sentence_bleu("a b c d e", "a b c d e") == 100.0);
  CHECK(ter("a b c", "a b c") == 0.0);
  CHECK(chrf("abc", "abc") == 100.0);
}

TEST_CASE("BLEU hand cases") {
  CHECK(corpus_bleu({"x y z"}, {"a b c"}) == 0.0);
  const auto stats = bleu_stats("the the the the", "the cat");
  // "the" occurs once in the reference, so only one of the four counts.
  CHECK(stats.matches[0] == 1);
  CHECK(stats.totals[0] == 4);
  CHECK(stats.matches[1] == 0);
  CHECK(corpus_bleu({"the the the the"}, {"the cat"}) == 0.0);
  CHECK_THROWS_AS(corpus_bleu({"a"}, {}), InvalidArgument);
  CHECK_THROWS_AS(corpus_bleu({}, {}), InvalidArgument);
}

TEST_CASE("BLEU brevity penalty") {
  // Every n-gram of the hypothesis matches; only the length differs.
  const double got = corpus_bleu({"a b c d e f"}, {"a b c d e f g h"});
  CHECK(got == doctest::Approx(100.0 * std::exp(1.0 - 8.0 / 6.0)).epsilon(1e-12));
}

TEST_CASE("sentence BLEU with exp smoothing on a golden pair") {
  const double score = sentence_bleu(kGoldenHyp, kGoldenRef);
  CHECK(std::abs(score - 17.47) <= 1.0);
  CHECK_THROWS_AS(sentence_bleu("a", ""), InvalidArgument);
}

TEST_CASE("sentence BLEU equals corpus BLEU without smoothing") {
  const char* hyp = "a b c d e f g";
  const char* ref = "a b c d e x g h";
  CHECK(sentence_bleu(hyp, ref) == doctest::Approx(corpus_bleu({hyp}, {ref})).epsilon(1e-12));
  CHECK(sentence_bleu("a b c d e", "a b c d e f") == doctest::Approx(corpus_bleu({"a b c d e"}, {"a b c d e f"})).epsilon(1e-12));
}

TEST_CASE("sentence BLEU smoothing keeps partial matches positive") {
  const double s = sentence_bleu("a b x c", "a b y c");
  CHECK(s > 0.0);
  CHECK(s < 100.0);
  CHECK(sentence_bleu("x y", "a b") == 0.0);
}

TEST_CASE("TER hand cases") {
  CHECK(ter("a b c d", "a b c") == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(ter("c d a b", "a b c d") == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(ter("a x c", "a b c") == doctest::Approx(100.0 / 3.0).epsilon(1e-12));
  CHECK(ter("", "a b") == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(ter("a b c d e", "a") == doctest::Approx(400.0).epsilon(1e-12));
  CHECK_THROWS_AS(ter("a", ""), InvalidArgument);
  const auto stats = ter_stats("c d a b", "a b c d");
  CHECK(stats.edits == 1.0);
  CHECK(stats.ref_length == 4.0);
}

TEST_CASE("shifts never make TER worse than plain edit distance") {
  Rng rng(3);
  for (int i = 0; i < 300; ++i) {
    const auto hyp = random_sentence(rng, 9);
    const auto ref = random_sentence(rng, 9);
    const auto h = split_whitespace(hyp), r = split_whitespace(ref);
    CHECK(ter(hyp, ref) <= 100.0 * edit_distance(h, r) / static_cast<double>(r.size()) + 1e-9);
  }
}

TEST_CASE("chrF hand cases") {
  // n <= 2: unigram P = R = 2/3, bigram P = R = 1/2.
  CHECK(chrf("abd", "abc", 2) == doctest::Approx(100.0 * 7.0 / 12.0).epsilon(1e-12));
  // Default order: trigram P = R = 0 joins the average.
  CHECK(chrf("abd", "abc") == doctest::Approx(100.0 * 7.0 / 18.0).epsilon(1e-12));
  CHECK(chrf("xyz", "abc") == 0.0);
  CHECK(chrf("a b c", "abc") == 100.0);
  CHECK_THROWS_AS(chrf("a", ""), InvalidArgument);
  const auto s = chrf_stats("abd", "abc", 2);
  CHECK(s.matches[0] == 2);
  CHECK(s.hyp_counts[1] == 2);
}

TEST_CASE("chrF weighs recall over precision") {
  const double short_hyp = chrf("ab", "abcd", 1);
  const double long_hyp = chrf("abcdefgh", "abcd", 1);
  // Unigram P/R are (1, 0.5) and (0.5, 1); beta = 2 favors recall.
  CHECK(short_hyp == doctest::Approx(100.0 * 5 * 0.5 / (4 * 1 + 0.5)).epsilon(1e-12));
  CHECK(long_hyp == doctest::Approx(100.0 * 5 * 0.5 / (4 * 0.5 + 1)).epsilon(1e-12));
  CHECK(long_hyp > short_hyp);
}

TEST_CASE("whitespace invariance") {
  const char* hyp = "a b  c d ";
  const char* clean = "a b c d";
  const char* ref = "a b c e";
  CHECK(corpus_bleu({hyp}, {ref}) == corpus_bleu({clean}, {ref}));
  CHECK(sentence_bleu(hyp, ref) == sentence_bleu(clean, ref));
  CHECK(ter(hyp, ref) == ter(clean, ref));
  CHECK(chrf(hyp, ref) == chrf(clean, ref));
  CHECK(ter(clean, "a b c e   ") == ter(clean, ref));
}

TEST_CASE("evaluate builds a report") {
  const std::vector<std::string> hyps{"a b c", "d e"}, refs{"a b c", "d f"};
  MetricSelection which;
  which.sentence_bleu = true;
  const auto report = evaluate(hyps, refs, which);
  CHECK(report.n_sentences == 2);
  CHECK(report.corpus_bleu == corpus_bleu(hyps, refs));
  CHECK(report.ter == corpus_ter(hyps, refs));
  CHECK(report.chrf == corpus_chrf(hyps, refs));
  REQUIRE(report.sentence_bleu.has_value());
  CHECK(report.sentence_bleu->size() == 2);
  CHECK((*report.sentence_bleu)[0] == 100.0);
  CHECK_FALSE(evaluate(hyps, refs).sentence_bleu.has_value());
  CHECK_THROWS_AS(evaluate({"a"}, refs), InvalidArgument);
}

TEST_CASE("scores stay within their ranges") {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const auto hyp = random_sentence(rng, 8), ref = random_sentence(rng, 8);
    const double b = sentence_bleu(hyp, ref), c = chrf(hyp, ref), t = ter(hyp, ref);
    CHECK(b >= 0.0);
    CHECK(b <= 100.0);
    CHECK(c >= 0.0);
    CHECK(c <= 100.0);
    CHECK(t >= 0.0);
  }
}
