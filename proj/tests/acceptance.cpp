// One PASS/FAIL line per acceptance criterion. Exit status 0 iff all pass.
//
//   acceptance [--work-dir DIR] [--only name,name]

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffmt/pipeline.hpp"
#include "diffmt/verify.hpp"

namespace fs = std::filesystem;
using namespace diffmt;

namespace {

const std::string kConfigDir = DIFFMT_SOURCE_DIR "/configs";

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Runs the named verify checks; passes iff all of them pass.
Outcome verify_checks(const std::vector<std::string>& names, double time_limit) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  for (const auto& name : names) {
    VerifyOptions opts;
    opts.filter = name;
    for (const auto& r : run_verify(opts)) {
      if (r.name != name) continue;
      o.passed = o.passed && r.passed;
      o.detail += (o.detail.empty() ? "" : "; ") + r.name + ": " + r.detail;
    }
  }
  const double took = seconds_since(start);
  if (time_limit > 0) {
    o.detail += fmt("; %.2f s (limit %.0f s)", took, time_limit);
    o.passed = o.passed && took < time_limit;
  }
  return o;
}

Outcome gradient_checks() {
  const auto start = std::chrono::steady_clock::now();
  const auto entries = gradient_check();
  const double took = seconds_since(start);
  bool ok = took < 60.0 && !entries.empty();
  double worst = 0;
  int min_coords = 1 << 30;
  for (const auto& e : entries) {
    ok = ok && e.coordinates >= 20 && e.max_relative_error < 1e-3;
    worst = std::max(worst, e.max_relative_error);
    min_coords = std::min(min_coords, e.coordinates);
  }
  return {ok, fmt("%.0f tensor classes, >= %.0f coordinates each, max rel err %.2e", double(entries.size()),
                  double(min_coords), worst) +
                  fmt(", %.1f s", took)};
}

Outcome copy_task(const fs::path& work) {
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyz";
  CipherCorpusRequest req;
  req.languages = {CipherLanguage("X", alphabet), CipherLanguage("Y", alphabet)};
  req.pairs = {{"X", "Y"}};
  req.n_per_pair = 4000;
  req.max_words = 4;
  req.max_chars = 14;
  req.seed = 101;
  const auto corpus = gen_cipher_corpus(req);
  req.n_per_pair = 200;
  req.seed = 202;
  const auto test = gen_cipher_corpus(req).directions.front();

  const auto vocab = build_vocabulary(corpus.directions, TokenizerMode::Char, 32, {"X", "Y"});
  const ModelConfig cfg{2, 4, 64, 256, vocab.size(), 16, 100};
  const auto sched = build_schedule(ScheduleKind::Cosine, cfg.steps);
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.gamma = 0.98;
  tc.batch_size = 32;
  tc.epochs = 1000;
  tc.max_steps = 15000;
  tc.seed = 303;
  tc.log_every = 1000;
  const auto start = std::chrono::steady_clock::now();
  const auto trained = train(cfg, tc, sched, vocab, corpus.directions, (work / "copy").string());

  std::vector<TranslationRequest> reqs;
  for (std::size_t i = 0; i < test.size(); ++i) reqs.push_back({test[i].src_text, "X", "Y", mix_seed(404, i)});
  const TransformerDenoiser model(cfg, trained.params);
  const auto out = translate_batch(reqs, model, vocab, sched);
  long right = 0, total = 0;
  std::vector<std::string> hyps, refs;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto ref = encode(test[i].tgt_text, "X", "Y", vocab, cfg.seq_len, Side::Target);
    for (int p = 0; p < cfg.seq_len; ++p) right += ref[static_cast<std::size_t>(p)] == out[i].ids[static_cast<std::size_t>(p)];
    total += cfg.seq_len;
    hyps.push_back(out[i].text);
    refs.push_back(test[i].tgt_text);
  }
  const double acc = 100.0 * static_cast<double>(right) / static_cast<double>(total);
  const double bleu = corpus_bleu(hyps, refs);
  const bool ok = vocab.size() <= 32 && trained.optimizer.step <= 20000 && acc >= 99.0 && bleu >= 95.0;
  return {ok, fmt("K=%.0f, %.0f steps, token accuracy %.2f%%", vocab.size(), double(trained.optimizer.step), acc) +
                  fmt(", BLEU %.2f on %.0f sentences, %.0f s", bleu, double(test.size()), seconds_since(start))};
}

// chrF of the zero-shot hypotheses against the source read as if it were in
// the pivot language and rendered in the target language.
double pivot_misread_chrf(const fs::path& run_dir, const GeneratedData& data, const std::string& pivot,
                          const std::string& src, const std::string& tgt) {
  auto lang = [&](const std::string& tag) -> const CipherLanguage& {
    for (const auto& l : data.languages) {
      if (l.tag() == tag) return l;
    }
    throw InvalidArgument("unknown language " + tag);
  };
  std::vector<std::string> hyps, misread;
  std::ifstream in(run_dir / "translations" / (src + "-" + tgt + ".jsonl"));
  for (std::string line; std::getline(in, line);) {
    const auto j = nlohmann::json::parse(line);
    hyps.push_back(j["hyp"].get<std::string>());
    misread.push_back(lang(tgt).encipher(lang(pivot).decipher(j["src"].get<std::string>())));
  }
  return hyps.empty() ? 0.0 : corpus_chrf(hyps, misread);
}

struct CipherRun {
  PipelineReport report;
  GeneratedData data;
  fs::path dir;
  long steps = 0;
  double seconds = 0;
};

CipherRun& cipher_run(const fs::path& work) {
  static std::optional<CipherRun> run;
  if (!run) {
    const auto start = std::chrono::steady_clock::now();
    const auto settings = PipelineSettings::from_config(Config::load(kConfigDir + "/desk.conf"));
    run.emplace();
    run->dir = work / "cipher";
    run->report = run_pipeline(settings, run->dir.string());
    run->data = generate_data(settings.data);
    run->steps = settings.train.max_steps;
    run->seconds = seconds_since(start);
  }
  return *run;
}

Outcome supervised_cipher(const fs::path& work) {
  const auto& run = cipher_run(work);
  bool ok = run.steps > 0 && run.steps <= 50000 && run.report.supervised.size() == 4;
  std::string detail = fmt("%.0f steps, chrF", double(run.steps));
  for (const auto& row : run.report.supervised) {
    ok = ok && row.chrf >= 80.0;
    detail += " " + row.src_lang + "->" + row.tgt_lang + fmt(" %.2f", row.chrf);
  }
  return {ok, detail + fmt(", %.0f s", run.seconds)};
}

Outcome zero_shot(const fs::path& work) {
  const auto& run = cipher_run(work);
  bool ok = run.report.zero_shot.size() == 2;
  std::string detail;
  for (const auto& row : run.report.zero_shot) {
    const double gain = row.chrf - row.baseline_chrf;
    ok = ok && gain >= 20.0;
    detail += (detail.empty() ? "" : "; ") + row.src_lang + "->" + row.tgt_lang +
              fmt(" chrF %.2f vs untrained %.2f (gain %+.2f)", row.chrf, row.baseline_chrf, gain) +
              fmt(", chrF vs source misread as A %.2f",
                  pivot_misread_chrf(run.dir, run.data, "A", row.src_lang, row.tgt_lang));
  }
  return {ok, detail};
}

Outcome determinism(const fs::path& work) {
  const auto settings = PipelineSettings::from_config(Config::load(kConfigDir + "/smoke.conf"));
  run_pipeline(settings, (work / "determinism_a").string());
  run_pipeline(settings, (work / "determinism_b").string());
  const auto a = slurp(work / "determinism_a" / "report.json");
  const auto b = slurp(work / "determinism_b" / "report.json");
  const bool same_translations =
      slurp(work / "determinism_a" / "translations" / "A-B.jsonl") == slurp(work / "determinism_b" / "translations" / "A-B.jsonl");
  return {!a.empty() && a == b && same_translations,
          fmt("report %.0f bytes, ", double(a.size())) + (a == b ? "identical" : "DIFFERENT") +
              (same_translations ? ", translations identical" : ", translations differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string work_dir = "acceptance_work";
  std::vector<std::string> only;
  app.add_option("--work-dir", work_dir, "Scratch directory for training runs");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const fs::path work(work_dir);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"diffusion_oracle_equivalence",
       [] { return verify_checks({"diffusion.posterior_bayes", "diffusion.chain_marginal"}, 10.0); }},
      {"loss_sanity", [] { return verify_checks({"diffusion.perfect_predictor", "diffusion.bound_oracle"}, 0); }},
      {"gradient_checks", gradient_checks},
      {"copy_task", [&] { return copy_task(work); }},
      {"supervised_cipher", [&] { return supervised_cipher(work); }},
      {"zero_shot", [&] { return zero_shot(work); }},
      {"metrics_golden", [] { return verify_checks({"metrics.golden"}, 0); }},
      {"determinism", [&] { return determinism(work); }},
  };

  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.passed ? 0 : 1;
    std::cout << (o.passed ? "PASS " : "FAIL ") << name << "  " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
