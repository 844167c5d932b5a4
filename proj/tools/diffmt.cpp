// diffmt: data generation, training, translation, scoring and self-checks.
//
// Exit status: 0 success, 1 failed check or runtime error, 2 usage error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "diffmt/checkpoint.hpp"
#include "diffmt/pipeline.hpp"
#include "diffmt/verify.hpp"

namespace fs = std::filesystem;
using namespace diffmt;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr int kFailure = 1;
constexpr int kUsage = 2;

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (path != "-") {
    file.open(path);
    if (!file) throw IoError("cannot open " + path);
    in = &file;
  }
  std::vector<std::string> lines;
  for (std::string line; std::getline(*in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

// Plain lines, or JSONL objects from which `field` (else the first present
// fallback) is taken.
std::vector<std::string> read_texts(const std::string& path, const std::vector<std::string>& fields) {
  auto lines = read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  const bool jsonl = !lines.empty() && std::all_of(lines.begin(), lines.end(), [](const std::string& l) {
    return !l.empty() && l.front() == '{';
  });
  if (!jsonl) return lines;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto j = nlohmann::json::parse(lines[i], nullptr, false);
    std::optional<std::string> text;
    if (j.is_object()) {
      for (const auto& f : fields) {
        if (j.contains(f) && j[f].is_string()) {
          text = j[f].get<std::string>();
          break;
        }
      }
    }
    if (!text) throw IoError(path + ":" + std::to_string(i + 1) + ": no usable text field");
    out.push_back(*text);
  }
  return out;
}

Config load_config(const std::string& path, const std::optional<std::uint64_t>& seed) {
  auto cfg = Config::load(path);
  if (seed) cfg.set("seed", std::to_string(*seed));
  return cfg;
}

std::vector<ParallelExample> load_training_examples(const std::string& data) {
  fs::path path(data);
  if (fs::is_directory(path)) path /= "train.jsonl";
  const auto loaded = load_parallel_file(path.string());
  for (const auto& d : loaded.diagnostics) std::cerr << path.string() << ":" << d.line << ": " << d.message << "\n";
  return loaded.examples;
}

std::vector<std::string> languages_of(const std::vector<ParallelExample>& examples) {
  std::vector<std::string> langs;
  for (const auto& ex : examples) {
    for (const auto* tag : {&ex.src_lang, &ex.tgt_lang}) {
      if (tag->empty()) throw InvalidArgument("training example without language tags");
      if (std::find(langs.begin(), langs.end(), *tag) == langs.end()) langs.push_back(*tag);
    }
  }
  return langs;
}

int cmd_gen_data(const std::vector<std::string>& langs, const std::vector<std::string>& pairs,
                 const std::vector<std::string>& zero_shot, int n, int n_test, std::uint64_t seed,
                 const std::string& out) {
  DataSettings s;
  s.langs = langs;
  for (const auto& p : pairs) s.pairs.push_back(parse_language_pair(p));
  for (const auto& p : zero_shot) s.zero_shot_pairs.push_back(parse_language_pair(p));
  s.n_per_pair = n;
  s.n_test = n_test;
  s.seed = seed;
  const auto data = generate_data(s);
  write_data_dir(out, data);
  std::size_t n_train = 0;
  for (const auto& d : data.train) n_train += d.size();
  std::cerr << "wrote " << n_train << " training examples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data, const std::string& out, bool resume,
              const std::optional<std::uint64_t>& seed) {
  const auto cfg = load_config(config_path, seed);
  auto settings = PipelineSettings::from_config(cfg, data.empty());
  std::vector<std::vector<ParallelExample>> datasets;
  std::vector<std::string> langs;
  if (data.empty()) {
    datasets = generate_data(settings.data).train;
    langs = settings.data.langs;
  } else {
    const auto examples = load_training_examples(data);
    datasets = group_by_direction(examples);
    langs = languages_of(examples);
  }
  if (datasets.empty()) throw InvalidArgument("no training examples");

  const fs::path dir(out);
  fs::create_directories(dir);
  Vocabulary vocab = resume && fs::exists(dir / TrainFiles::kVocab)
                         ? Vocabulary::load_file((dir / TrainFiles::kVocab).string())
                         : build_vocabulary(datasets, settings.tokenizer_mode, settings.vocab_max_size, langs);
  const auto model_cfg = settings.model_config(vocab.size());
  const auto sched = build_schedule(settings.schedule_kind, settings.steps);
  {
    std::ofstream(dir / "config.txt") << cfg.to_string();
  }
  const auto result = train(model_cfg, settings.train, sched, vocab, datasets, out, resume, [](const TrainLogEntry& e) {
    std::cerr << "step " << e.step << " epoch " << e.epoch << " loss " << e.loss << " lr " << e.lr << "\n";
  });
  std::cerr << "trained to step " << result.optimizer.step << ", checkpoint in " << (dir / TrainFiles::kCheckpoint).string()
            << "\n";
  return 0;
}

int cmd_translate(const std::string& ckpt_path, std::string vocab_path, std::string schedule, const std::string& src_lang,
                  const std::string& tgt_lang, const std::string& input, std::uint64_t seed, const std::string& mode,
                  const std::string& output) {
  const fs::path ckpt(ckpt_path);
  if (vocab_path.empty()) vocab_path = (ckpt.parent_path() / TrainFiles::kVocab).string();
  if (schedule.empty()) {
    const auto config = ckpt.parent_path() / "config.txt";
    schedule = fs::exists(config) ? Config::load(config.string()).get_string("schedule.kind", "cosine") : "cosine";
  }
  const auto loaded = load_checkpoint(ckpt_path);
  const auto vocab = Vocabulary::load_file(vocab_path);
  const auto sched = build_schedule(parse_schedule_kind(schedule), loaded.config.steps);
  const TransformerDenoiser model(loaded.config, loaded.params);

  const auto texts = read_texts(input, {"src"});
  std::vector<ParallelExample> examples;
  for (const auto& t : texts) examples.push_back({t, "", src_lang, tgt_lang});
  SamplerOptions opts;
  opts.mode = parse_decode_mode(mode);
  const auto hyps = examples.empty() ? std::vector<std::string>{}
                                     : translate_examples(examples, model, vocab, sched, opts, seed);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!output.empty() && output != "-") {
    file.open(output, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + output);
    out = &file;
  }
  for (std::size_t i = 0; i < texts.size(); ++i) {
    ordered_json j;
    j["src"] = texts[i];
    j["hyp"] = hyps[i];
    j["src_lang"] = src_lang;
    j["tgt_lang"] = tgt_lang;
    *out << j.dump() << '\n';
  }
  return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path, const std::vector<std::string>& metrics) {
  const auto hyps = read_texts(hyp_path, {"hyp"});
  const auto refs = read_texts(ref_path, {"ref", "tgt"});
  MetricSelection which;
  which.bleu = which.ter = which.chrf = false;
  for (const auto& m : metrics) {
    if (m == "bleu") {
      which.bleu = true;
    } else if (m == "ter") {
      which.ter = true;
    } else if (m == "chrf") {
      which.chrf = true;
    } else if (m == "sentence_bleu") {
      which.sentence_bleu = true;
    } else {
      throw InvalidArgument("unknown metric '" + m + "'");
    }
  }
  const auto report = evaluate(hyps, refs, which);
  ordered_json j;
  j["n"] = report.n_sentences;
  if (which.bleu) j["bleu"] = report.corpus_bleu;
  if (which.ter) j["ter"] = report.ter;
  if (which.chrf) j["chrf"] = report.chrf;
  if (report.sentence_bleu) j["sentence_bleu"] = *report.sentence_bleu;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify(const std::string& filter, bool zero_beta_fault, std::uint64_t seed) {
  VerifyOptions opts;
  opts.filter = filter;
  opts.zero_beta_fault = zero_beta_fault;
  opts.seed = seed;
  const auto results = run_verify(opts);
  if (results.empty()) {
    std::cerr << "no check matches filter '" << filter << "'\n";
    return kUsage;
  }
  print_verify_table(std::cout, results);
  const bool ok = std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
  return ok ? 0 : kFailure;
}

int cmd_pipeline(const std::string& config_path, const std::string& out, const std::optional<std::uint64_t>& seed) {
  const auto cfg = load_config(config_path, seed);
  const auto settings = PipelineSettings::from_config(cfg);
  fs::create_directories(fs::path(out) / "model");
  {
    std::ofstream(fs::path(out) / "model" / "config.txt") << cfg.to_string();
  }
  const auto report = run_pipeline(settings, out, [](const std::string& msg) { std::cerr << msg << "\n"; });
  std::cout << report.to_json();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete diffusion translation on synthetic cipher languages"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic cipher-language corpus");
  std::vector<std::string> langs{"A", "B", "C"}, pairs{"A-B", "A-C"}, zero_shot{"B-C"};
  int n = 1000, n_test = 200;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--langs", langs, "Language tags")->delimiter(',');
  gen->add_option("--pairs", pairs, "Trained pairs, SRC-TGT")->delimiter(',');
  gen->add_option("--zero-shot-pair", zero_shot, "Held-out pairs, SRC-TGT")->delimiter(',');
  gen->add_option("--n", n, "Training sentences per pair");
  gen->add_option("--n-test", n_test, "Test sentences per pair");
  gen->add_option("--seed", gen_seed, "Random seed");
  gen->add_option("--out", gen_out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a denoiser");
  std::string config, data, train_out;
  bool resume = false;
  tr->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data, "train.jsonl or a directory holding it (default: generate from the config)");
  tr->add_option("--out", train_out, "Output directory")->required();
  tr->add_flag("--resume", resume, "Continue from the state in --out");
  tr->add_option("--seed", seed, "Override the config seed");

  auto* tl = app.add_subcommand("translate", "Translate sentences with a trained checkpoint");
  std::string ckpt, vocab_path, schedule, src_lang, tgt_lang, input = "-", mode = "argmax", tl_out;
  std::uint64_t tl_seed = 0;
  tl->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  tl->add_option("--vocab", vocab_path, "Vocabulary file (default: vocab.txt next to the checkpoint)");
  tl->add_option("--schedule", schedule, "Noise schedule kind (default: from config.txt next to the checkpoint)");
  tl->add_option("--src-lang", src_lang, "Source language tag")->required();
  tl->add_option("--tgt-lang", tgt_lang, "Target language tag")->required();
  tl->add_option("--input", input, "Text or JSONL file, '-' for stdin");
  tl->add_option("--seed", tl_seed, "Random seed");
  tl->add_option("--mode", mode, "Final readout: argmax or sample")->check(CLI::IsMember({"argmax", "sample"}));
  tl->add_option("--out", tl_out, "Output JSONL (default: stdout)");

  auto* ev = app.add_subcommand("evaluate", "Score hypotheses against references");
  std::string hyp, ref;
  std::vector<std::string> metrics{"bleu", "ter", "chrf"};
  ev->add_option("--hyp", hyp, "Hypotheses: text lines or JSONL with \"hyp\"")->required()->check(CLI::ExistingFile);
  ev->add_option("--ref", ref, "References: text lines or JSONL with \"ref\"/\"tgt\"")->required()->check(CLI::ExistingFile);
  ev->add_option("--metrics", metrics, "bleu, ter, chrf, sentence_bleu")->delimiter(',');
  ev->add_option("--seed", seed, "Accepted for uniformity; scoring is deterministic");

  auto* vf = app.add_subcommand("verify", "Run the oracle checks");
  std::string filter;
  bool zero_beta_fault = false;
  std::uint64_t vf_seed = 0;
  vf->add_option("--filter", filter, "Run only checks whose name contains this text");
  vf->add_option("--seed", vf_seed, "Offset for the randomized sweeps");
  vf->add_flag("--inject-zero-beta-fault", zero_beta_fault)->group("");

  auto* pl = app.add_subcommand("pipeline", "Generate, train, translate and score in one run");
  std::string pl_config, pl_out;
  pl->add_option("--config", pl_config, "Config file")->required()->check(CLI::ExistingFile);
  pl->add_option("--out", pl_out, "Output directory")->required();
  pl->add_option("--seed", seed, "Override the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) return cmd_gen_data(langs, pairs, zero_shot, n, n_test, gen_seed, gen_out);
    if (*tr) return cmd_train(config, data, train_out, resume, seed);
    if (*tl) return cmd_translate(ckpt, vocab_path, schedule, src_lang, tgt_lang, input, tl_seed, mode, tl_out);
    if (*ev) return cmd_evaluate(hyp, ref, metrics);
    if (*vf) return cmd_verify(filter, zero_beta_fault, vf_seed);
    if (*pl) return cmd_pipeline(pl_config, pl_out, seed);
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
