#include "diffmt/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "json.hpp"

namespace diffmt {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::vector<LanguagePair> parse_pairs(const std::vector<std::string>& items) {
  std::vector<LanguagePair> out;
  for (const auto& item : items) out.push_back(parse_language_pair(item));
  return out;
}

CipherCorpusRequest corpus_request(const DataSettings& s, const std::vector<CipherLanguage>& langs) {
  CipherCorpusRequest req;
  req.languages = langs;
  req.pairs = s.pairs;
  req.min_words = s.min_words;
  req.max_words = s.max_words;
  req.min_word_length = s.min_word_length;
  req.max_word_length = s.max_word_length;
  req.max_chars = s.max_chars;
  return req;
}

void write_json_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<ParallelExample> flatten(const std::vector<std::vector<ParallelExample>>& lists) {
  std::vector<ParallelExample> out;
  for (const auto& l : lists) out.insert(out.end(), l.begin(), l.end());
  return out;
}

ordered_json score_json(const DirectionScore& s, bool baseline) {
  ordered_json j;
  j["src_lang"] = s.src_lang;
  j["tgt_lang"] = s.tgt_lang;
  j["n"] = s.n;
  j["bleu"] = s.bleu;
  j["ter"] = s.ter;
  j["chrf"] = s.chrf;
  if (baseline) j["baseline_chrf"] = s.baseline_chrf;
  return j;
}

}  // namespace

LanguagePair parse_language_pair(const std::string& text) {
  const auto dash = text.find('-');
  if (dash == std::string::npos || dash == 0 || dash + 1 == text.size() || text.find('-', dash + 1) != std::string::npos) {
    throw InvalidArgument("language pair must look like SRC-TGT: '" + text + "'");
  }
  return {text.substr(0, dash), text.substr(dash + 1)};
}

GeneratedData generate_data(const DataSettings& s) {
  if (s.langs.empty()) throw InvalidArgument("data.langs must name at least one language");
  if (!s.word_order.empty() && s.word_order.size() != s.langs.size()) {
    throw InvalidArgument("data.word_order needs one entry per language");
  }
  if (s.n_test < 1) throw InvalidArgument("data.n_test must be >= 1");
  GeneratedData data;
  for (std::size_t i = 0; i < s.langs.size(); ++i) {
    const auto order = s.word_order.empty() ? WordOrder::Identity : s.word_order[i];
    data.languages.push_back(CipherLanguage::random(s.langs[i], s.alphabet, mix_seed(s.seed, i), order));
  }

  auto train_req = corpus_request(s, data.languages);
  train_req.n_per_pair = s.n_per_pair;
  train_req.seed = mix_seed(s.seed, 1000);
  data.train = gen_cipher_corpus(train_req).directions;

  auto test_req = corpus_request(s, data.languages);
  test_req.zero_shot_pairs = s.zero_shot_pairs;
  test_req.n_per_pair = s.n_test;
  test_req.seed = mix_seed(s.seed, 2000);
  auto test = gen_cipher_corpus(test_req);
  data.test = std::move(test.directions);
  data.zero_shot = std::move(test.zero_shot_directions);
  return data;
}

void write_data_dir(const std::string& dir, const GeneratedData& data) {
  fs::create_directories(dir);
  const fs::path root(dir);
  save_parallel_file((root / "train.jsonl").string(), flatten(data.train));
  save_parallel_file((root / "test.jsonl").string(), flatten(data.test));
  save_parallel_file((root / "zero_shot.jsonl").string(), flatten(data.zero_shot));
  ordered_json langs = ordered_json::array();
  for (const auto& l : data.languages) {
    ordered_json j;
    j["tag"] = l.tag();
    j["alphabet"] = l.alphabet();
    j["image"] = l.image();
    j["word_order"] = std::string(to_string(l.order()));
    langs.push_back(j);
  }
  write_json_file(root / "languages.json", langs.dump(2) + "\n");
}

std::vector<std::vector<ParallelExample>> group_by_direction(const std::vector<ParallelExample>& examples) {
  std::vector<std::vector<ParallelExample>> groups;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (const auto& ex : examples) {
    const auto key = std::make_pair(ex.src_lang, ex.tgt_lang);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, groups.size()).first;
      groups.emplace_back();
    }
    groups[it->second].push_back(ex);
  }
  return groups;
}

DataSettings data_settings(const Config& cfg, std::uint64_t seed) {
  DataSettings d;
  d.langs = cfg.get_list("data.langs");
  d.pairs = parse_pairs(cfg.get_list("data.pairs"));
  d.zero_shot_pairs = parse_pairs(cfg.get_list("data.zero_shot_pairs"));
  d.n_per_pair = static_cast<int>(cfg.get_int("data.n_per_pair"));
  d.n_test = static_cast<int>(cfg.get_int("data.n_test"));
  d.alphabet = cfg.get_string("data.alphabet", d.alphabet);
  if (cfg.has("data.word_order")) {
    for (const auto& w : cfg.get_list("data.word_order")) d.word_order.push_back(parse_word_order(w));
  }
  d.min_words = static_cast<int>(cfg.get_int("data.min_words", d.min_words));
  d.max_words = static_cast<int>(cfg.get_int("data.max_words", d.max_words));
  d.min_word_length = static_cast<int>(cfg.get_int("data.min_word_length", d.min_word_length));
  d.max_word_length = static_cast<int>(cfg.get_int("data.max_word_length", d.max_word_length));
  d.max_chars = static_cast<int>(cfg.get_int("data.max_chars", d.max_chars));
  d.seed = seed;
  return d;
}

namespace {

void read_model_settings(const Config& cfg, PipelineSettings& s) {
  s.tokenizer_mode = parse_tokenizer_mode(cfg.get_string("tokenizer.mode"));
  s.vocab_max_size = static_cast<int>(cfg.get_int("tokenizer.max_size"));
  s.schedule_kind = parse_schedule_kind(cfg.get_string("schedule.kind"));
  s.steps = static_cast<int>(cfg.get_int("schedule.T"));
  s.n_layers = static_cast<int>(cfg.get_int("model.n_layers"));
  s.n_heads = static_cast<int>(cfg.get_int("model.n_heads"));
  s.d_model = static_cast<int>(cfg.get_int("model.d_model"));
  s.d_ff = static_cast<int>(cfg.get_int("model.d_ff"));
  s.seq_len = static_cast<int>(cfg.get_int("model.L"));

  auto& t = s.train;
  t.lr = cfg.get_double("train.lr");
  t.gamma = cfg.get_double("train.gamma");
  t.batch_size = static_cast<int>(cfg.get_int("train.batch_size"));
  t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  t.max_steps = cfg.get_int("train.max_steps", 0);
  t.clip_norm = cfg.get_double("train.clip_norm", t.clip_norm);
  t.balance = cfg.get_bool("train.balance", t.balance);
  t.log_every = static_cast<int>(cfg.get_int("train.log_every", 100));
  t.seed = s.seed;
  t.validate();

  s.decode_mode = parse_decode_mode(cfg.get_string("translate.mode", "argmax"));
  s.max_batch = static_cast<int>(cfg.get_int("translate.max_batch", s.max_batch));
}

}  // namespace

PipelineSettings PipelineSettings::from_config(const Config& cfg, bool with_data) {
  PipelineSettings s;
  s.seed = cfg.get_uint("seed");
  s.data.seed = s.seed;
  if (with_data) s.data = data_settings(cfg, s.seed);
  read_model_settings(cfg, s);
  return s;
}

ModelConfig PipelineSettings::model_config(int vocab_size) const {
  ModelConfig m{n_layers, n_heads, d_model, d_ff, vocab_size, seq_len, steps};
  m.validate();
  return m;
}

std::string PipelineReport::to_json() const {
  ordered_json j;
  j["supervised"] = ordered_json::array();
  for (const auto& s : supervised) j["supervised"].push_back(score_json(s, false));
  j["zero_shot"] = ordered_json::array();
  for (const auto& s : zero_shot) j["zero_shot"].push_back(score_json(s, true));
  return j.dump(2) + "\n";
}

Vocabulary build_vocabulary(const std::vector<std::vector<ParallelExample>>& train, TokenizerMode mode,
                            int max_size, const std::vector<std::string>& langs) {
  std::vector<std::string> texts;
  for (const auto& dir : train) {
    for (const auto& ex : dir) {
      texts.push_back(ex.src_text);
      texts.push_back(ex.tgt_text);
    }
  }
  return Vocabulary::build(texts, mode, max_size, langs);
}

std::vector<std::string> translate_examples(const std::vector<ParallelExample>& examples, const X0Predictor& model,
                                            const Vocabulary& vocab, const NoiseSchedule& sched,
                                            const SamplerOptions& options, std::uint64_t seed) {
  std::vector<TranslationRequest> requests;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    requests.push_back({examples[i].src_text, examples[i].src_lang, examples[i].tgt_lang, mix_seed(seed, i)});
  }
  std::vector<std::string> hyps;
  for (auto& tr : translate_batch(requests, model, vocab, sched, options)) hyps.push_back(std::move(tr.text));
  return hyps;
}

DirectionScore score_direction(const std::vector<ParallelExample>& examples, const std::vector<std::string>& hyps) {
  if (examples.empty()) throw InvalidArgument("cannot score an empty direction");
  std::vector<std::string> refs;
  for (const auto& ex : examples) refs.push_back(ex.tgt_text);
  const auto report = evaluate(hyps, refs);
  DirectionScore s;
  s.src_lang = examples.front().src_lang;
  s.tgt_lang = examples.front().tgt_lang;
  s.n = static_cast<int>(examples.size());
  s.bleu = report.corpus_bleu;
  s.ter = report.ter;
  s.chrf = report.chrf;
  return s;
}

PipelineReport run_pipeline(const PipelineSettings& settings, const std::string& out_dir,
                            const std::function<void(const std::string&)>& progress) {
  const auto say = [&](const std::string& msg) {
    if (progress) progress(msg);
  };
  const fs::path root(out_dir);
  fs::create_directories(root);

  say("generating data");
  const auto data = generate_data(settings.data);
  write_data_dir((root / "data").string(), data);

  const auto vocab =
      build_vocabulary(data.train, settings.tokenizer_mode, settings.vocab_max_size, settings.data.langs);
  const auto model_cfg = settings.model_config(vocab.size());
  const auto sched = build_schedule(settings.schedule_kind, settings.steps);

  say("training");
  const auto trained = train(model_cfg, settings.train, sched, vocab, data.train, (root / "model").string(), false,
                             [&](const TrainLogEntry& e) {
                               say("step " + std::to_string(e.step) + " epoch " + std::to_string(e.epoch) +
                                   " loss " + std::to_string(e.loss));
                             });

  const TransformerDenoiser model(model_cfg, trained.params);
  const TransformerDenoiser untrained(model_cfg, initial_params(model_cfg, settings.train));
  SamplerOptions opts;
  opts.mode = settings.decode_mode;
  opts.max_batch = settings.max_batch;
  const std::uint64_t translate_seed = mix_seed(settings.seed, 3000);

  fs::create_directories(root / "translations");
  const auto run_direction = [&](const std::vector<ParallelExample>& examples, bool baseline) {
    const auto hyps = translate_examples(examples, model, vocab, sched, opts, translate_seed);
    auto score = score_direction(examples, hyps);
    say("translated " + score.src_lang + "-" + score.tgt_lang);
    std::ofstream out(root / "translations" / (score.src_lang + "-" + score.tgt_lang + ".jsonl"),
                      std::ios::binary | std::ios::trunc);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      ordered_json j;
      j["src"] = examples[i].src_text;
      j["hyp"] = hyps[i];
      j["ref"] = examples[i].tgt_text;
      j["src_lang"] = examples[i].src_lang;
      j["tgt_lang"] = examples[i].tgt_lang;
      out << j.dump() << '\n';
    }
    if (baseline) {
      const auto base = translate_examples(examples, untrained, vocab, sched, opts, translate_seed);
      score.baseline_chrf = score_direction(examples, base).chrf;
    }
    return score;
  };

  PipelineReport report;
  for (const auto& dir : data.test) report.supervised.push_back(run_direction(dir, false));
  for (const auto& dir : data.zero_shot) report.zero_shot.push_back(run_direction(dir, true));
  write_json_file(root / "report.json", report.to_json());
  say("wrote " + (root / "report.json").string());
  return report;
}

}  // namespace diffmt
