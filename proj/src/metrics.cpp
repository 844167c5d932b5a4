#include "diffmt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

#include "diffmt/common.hpp"

namespace diffmt {

namespace {

using Words = std::vector<std::string>;

void check_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) {
    throw InvalidArgument("hypothesis/reference count mismatch (" + std::to_string(hyps.size()) + " vs " +
                          std::to_string(refs.size()) + ")");
  }
  if (hyps.empty()) throw InvalidArgument("cannot score an empty corpus");
}

void check_reference(std::string_view ref) {
  if (split_whitespace(ref).empty()) throw InvalidArgument("empty reference");
}

std::map<Words, long> ngram_counts(const Words& words, int n) {
  std::map<Words, long> counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= words.size(); ++i) {
    ++counts[Words(words.begin() + i, words.begin() + i + n)];
  }
  return counts;
}

double bleu_from_stats(const BleuStats& s, bool smooth) {
  double bp = 1.0;
  if (s.hyp_length < s.ref_length) {
    bp = s.hyp_length > 0 ? std::exp(1.0 - static_cast<double>(s.ref_length) / s.hyp_length) : 0.0;
  }
  if (std::all_of(std::begin(s.matches), std::end(s.matches), [](long m) { return m == 0; })) return 0.0;

  double log_sum = 0.0;
  int order = BleuStats::kMaxOrder;
  double smooth_scale = 1.0;
  for (int n = 0; n < BleuStats::kMaxOrder; ++n) {
    if (s.totals[n] == 0) {
      if (smooth) {
        order = n;
        break;
      }
      return 0.0;
    }
    if (s.matches[n] == 0) {
      if (!smooth) return 0.0;
      smooth_scale *= 2.0;
      log_sum += std::log(1.0 / (smooth_scale * static_cast<double>(s.totals[n])));
    } else {
      log_sum += std::log(static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]));
    }
  }
  return 100.0 * bp * std::exp(log_sum / order);
}

// --- TER -------------------------------------------------------------------

constexpr int kMaxShiftSize = 10;
constexpr int kMaxShiftDistance = 50;
constexpr int kMaxShiftCandidates = 1000;

struct EditAlignment {
  int distance = 0;
  std::vector<int> ref_to_hyp;  // -1 where the reference word was deleted
  std::vector<bool> hyp_error;
  std::vector<bool> ref_error;
};

EditAlignment align(const Words& hyp, const Words& ref) {
  const std::size_t nh = hyp.size(), nr = ref.size();
  std::vector<int> dp((nh + 1) * (nr + 1));
  auto at = [&](std::size_t h, std::size_t r) -> int& { return dp[h * (nr + 1) + r]; };
  for (std::size_t h = 0; h <= nh; ++h) at(h, 0) = static_cast<int>(h);
  for (std::size_t r = 0; r <= nr; ++r) at(0, r) = static_cast<int>(r);
  for (std::size_t h = 1; h <= nh; ++h) {
    for (std::size_t r = 1; r <= nr; ++r) {
      const int diag = at(h - 1, r - 1) + (hyp[h - 1] == ref[r - 1] ? 0 : 1);
      at(h, r) = std::min({diag, at(h - 1, r) + 1, at(h, r - 1) + 1});
    }
  }
  EditAlignment a;
  a.distance = at(nh, nr);
  a.ref_to_hyp.assign(nr, -1);
  a.hyp_error.assign(nh, false);
  a.ref_error.assign(nr, false);
  std::size_t h = nh, r = nr;
  while (h > 0 || r > 0) {
    if (h > 0 && r > 0) {
      const bool same = hyp[h - 1] == ref[r - 1];
      if (at(h, r) == at(h - 1, r - 1) + (same ? 0 : 1)) {
        a.ref_to_hyp[r - 1] = static_cast<int>(h - 1);
        if (!same) a.hyp_error[h - 1] = a.ref_error[r - 1] = true;
        --h;
        --r;
        continue;
      }
    }
    if (h > 0 && at(h, r) == at(h - 1, r) + 1) {
      a.hyp_error[--h] = true;
    } else {
      a.ref_error[--r] = true;
    }
  }
  return a;
}

Words perform_shift(const Words& w, int start, int length, int target) {
  Words out;
  out.reserve(w.size());
  auto append = [&](int from, int to) {
    for (int i = std::max(from, 0); i < std::min<int>(to, static_cast<int>(w.size())); ++i) out.push_back(w[i]);
  };
  if (target < start) {
    append(0, target);
    append(start, start + length);
    append(target, start);
    append(start + length, static_cast<int>(w.size()));
  } else if (target > start + length) {
    append(0, start);
    append(start + length, target);
    append(start, start + length);
    append(target, static_cast<int>(w.size()));
  } else {
    append(0, start);
    append(start + length, length + target);
    append(start, start + length);
    append(length + target, static_cast<int>(w.size()));
  }
  return out;
}

// Applies the best single shift. Returns the edit-distance reduction (0 when
// no shift helps).
int best_shift(Words& hyp, const Words& ref, int& candidates_checked) {
  const EditAlignment base = align(hyp, ref);
  const int nh = static_cast<int>(hyp.size()), nr = static_cast<int>(ref.size());
  // (reduction, length, -start, -target) is maximized, as in tercom.
  std::tuple<int, int, int, int> best{0, 0, 0, 0};
  Words best_words;
  bool found = false;

  for (int sh = 0; sh < nh; ++sh) {
    for (int sr = 0; sr < nr; ++sr) {
      if (std::abs(sr - sh) > kMaxShiftDistance) continue;
      for (int len = 1; len <= kMaxShiftSize && sh + len <= nh && sr + len <= nr; ++len) {
        if (hyp[sh + len - 1] != ref[sr + len - 1]) break;
        const bool hyp_wrong = std::any_of(base.hyp_error.begin() + sh, base.hyp_error.begin() + sh + len,
                                           [](bool e) { return e; });
        const bool ref_wrong = std::any_of(base.ref_error.begin() + sr, base.ref_error.begin() + sr + len,
                                           [](bool e) { return e; });
        if (!hyp_wrong || !ref_wrong) continue;
        const int aligned = base.ref_to_hyp[sr];
        if (aligned >= sh && aligned < sh + len) continue;

        int prev_target = -1;
        for (int offset = -1; offset < len; ++offset) {
          int target;
          if (sr + offset == -1) {
            target = 0;
          } else if (base.ref_to_hyp[sr + offset] >= 0) {
            target = base.ref_to_hyp[sr + offset] + 1;
          } else {
            break;
          }
          if (target == prev_target) continue;
          prev_target = target;
          Words shifted = perform_shift(hyp, sh, len, target);
          const int reduction = base.distance - align(shifted, ref).distance;
          const std::tuple<int, int, int, int> key{reduction, len, -sh, -target};
          ++candidates_checked;
          if (!found || key > best) {
            best = key;
            best_words = std::move(shifted);
            found = true;
          }
        }
        if (candidates_checked >= kMaxShiftCandidates) break;
      }
      if (candidates_checked >= kMaxShiftCandidates) break;
    }
    if (candidates_checked >= kMaxShiftCandidates) break;
  }
  if (!found || std::get<0>(best) <= 0) return 0;
  hyp = std::move(best_words);
  return std::get<0>(best);
}

// --- chrF ------------------------------------------------------------------

std::vector<std::string> code_points_without_space(std::string_view text) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < text.size();) {
    const auto c = static_cast<unsigned char>(text[i]);
    std::size_t n = c < 0x80 ? 1 : (c >> 5) == 0x6 ? 2 : (c >> 4) == 0xe ? 3 : (c >> 3) == 0x1e ? 4 : 1;
    n = std::min(n, text.size() - i);
    if (!(n == 1 && (c == ' ' || c == '\t' || c == '\n' || c == '\r'))) out.emplace_back(text.substr(i, n));
    i += n;
  }
  return out;
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

BleuStats& BleuStats::operator+=(const BleuStats& other) {
  for (int n = 0; n < kMaxOrder; ++n) {
    matches[n] += other.matches[n];
    totals[n] += other.totals[n];
  }
  hyp_length += other.hyp_length;
  ref_length += other.ref_length;
  return *this;
}

BleuStats bleu_stats(std::string_view hyp, std::string_view ref) {
  const Words h = split_whitespace(hyp), r = split_whitespace(ref);
  BleuStats s;
  s.hyp_length = static_cast<long>(h.size());
  s.ref_length = static_cast<long>(r.size());
  for (int n = 1; n <= BleuStats::kMaxOrder; ++n) {
    const auto hc = ngram_counts(h, n);
    const auto rc = ngram_counts(r, n);
    s.totals[n - 1] = std::max<long>(0, static_cast<long>(h.size()) - n + 1);
    for (const auto& [gram, count] : hc) {
      const auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(count, it->second);
    }
  }
  return s;
}

double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_corpus(hyps, refs);
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) total += bleu_stats(hyps[i], refs[i]);
  return bleu_from_stats(total, false);
}

double sentence_bleu(std::string_view hyp, std::string_view ref) {
  check_reference(ref);
  return bleu_from_stats(bleu_stats(hyp, ref), true);
}

TerStats ter_stats(std::string_view hyp, std::string_view ref) {
  Words h = split_whitespace(hyp);
  const Words r = split_whitespace(ref);
  TerStats s;
  s.ref_length = static_cast<double>(r.size());
  if (r.empty()) {
    s.edits = static_cast<double>(h.size());
    return s;
  }
  int shifts = 0, checked = 0;
  while (checked < kMaxShiftCandidates) {
    if (best_shift(h, r, checked) <= 0) break;
    ++shifts;
  }
  s.edits = shifts + align(h, r).distance;
  return s;
}

double ter(std::string_view hyp, std::string_view ref) {
  check_reference(ref);
  const TerStats s = ter_stats(hyp, ref);
  return 100.0 * s.edits / s.ref_length;
}

double corpus_ter(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  check_corpus(hyps, refs);
  double edits = 0, length = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const TerStats s = ter_stats(hyps[i], refs[i]);
    edits += s.edits;
    length += s.ref_length;
  }
  if (length == 0) return edits > 0 ? 100.0 : 0.0;
  return 100.0 * edits / length;
}

ChrfStats& ChrfStats::operator+=(const ChrfStats& other) {
  if (other.matches.size() != matches.size()) throw InvalidArgument("chrF statistics of different order");
  for (std::size_t n = 0; n < matches.size(); ++n) {
    hyp_counts[n] += other.hyp_counts[n];
    ref_counts[n] += other.ref_counts[n];
    matches[n] += other.matches[n];
  }
  return *this;
}

ChrfStats chrf_stats(std::string_view hyp, std::string_view ref, int max_order) {
  if (max_order < 1) throw InvalidArgument("chrF order must be >= 1");
  const auto h = code_points_without_space(hyp), r = code_points_without_space(ref);
  ChrfStats s(max_order);
  for (int n = 1; n <= max_order; ++n) {
    const auto hc = ngram_counts(h, n);
    const auto rc = ngram_counts(r, n);
    for (const auto& [gram, count] : hc) {
      s.hyp_counts[n - 1] += count;
      const auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(count, it->second);
    }
    for (const auto& [gram, count] : rc) s.ref_counts[n - 1] += count;
  }
  return s;
}

double chrf_score(const ChrfStats& s, double beta) {
  double precision = 0, recall = 0;
  int effective = 0;
  for (std::size_t n = 0; n < s.matches.size(); ++n) {
    if (s.hyp_counts[n] > 0 && s.ref_counts[n] > 0) {
      precision += static_cast<double>(s.matches[n]) / s.hyp_counts[n];
      recall += static_cast<double>(s.matches[n]) / s.ref_counts[n];
      ++effective;
    }
  }
  if (effective == 0) return 0.0;
  precision /= effective;
  recall /= effective;
  if (precision + recall == 0) return 0.0;
  const double b2 = beta * beta;
  return 100.0 * (1 + b2) * precision * recall / (b2 * precision + recall);
}

double chrf(std::string_view hyp, std::string_view ref, int max_order, double beta) {
  check_reference(ref);
  return chrf_score(chrf_stats(hyp, ref, max_order), beta);
}

double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, int max_order,
                   double beta) {
  check_corpus(hyps, refs);
  ChrfStats total(max_order);
  for (std::size_t i = 0; i < hyps.size(); ++i) total += chrf_stats(hyps[i], refs[i], max_order);
  return chrf_score(total, beta);
}

EvalReport evaluate(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                    const MetricSelection& which) {
  check_corpus(hyps, refs);
  EvalReport report;
  report.n_sentences = static_cast<int>(hyps.size());
  if (which.bleu) report.corpus_bleu = corpus_bleu(hyps, refs);
  if (which.ter) report.ter = corpus_ter(hyps, refs);
  if (which.chrf) report.chrf = corpus_chrf(hyps, refs);
  if (which.sentence_bleu) {
    std::vector<double> scores;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      scores.push_back(split_whitespace(refs[i]).empty() ? 0.0 : sentence_bleu(hyps[i], refs[i]));
    }
    report.sentence_bleu = std::move(scores);
  }
  return report;
}

}  // namespace diffmt
