#include "diffmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "json.hpp"

namespace diffmt {

namespace {

template <class T>
void shuffle_in_place(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && text[i] == ' ') ++i;
    const std::size_t start = i;
    while (i < text.size() && text[i] != ' ') ++i;
    if (i > start) words.emplace_back(text.substr(start, i - start));
  }
  return words;
}

std::string reorder(std::string_view text, WordOrder order) {
  if (order == WordOrder::Identity) return std::string(text);
  auto words = split_words(text);
  std::reverse(words.begin(), words.end());
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

const CipherLanguage& find_language(const std::vector<CipherLanguage>& languages, const std::string& tag) {
  for (const auto& lang : languages) {
    if (lang.tag() == tag) return lang;
  }
  throw InvalidArgument("unknown language '" + tag + "' in language pair");
}

}  // namespace

WordOrder parse_word_order(std::string_view name) {
  if (name == "identity") return WordOrder::Identity;
  if (name == "reverse") return WordOrder::Reverse;
  throw InvalidArgument("unknown word order '" + std::string(name) + "'");
}

std::string_view to_string(WordOrder order) { return order == WordOrder::Identity ? "identity" : "reverse"; }

CipherLanguage::CipherLanguage(std::string tag, std::string alphabet, WordOrder order)
    : CipherLanguage(std::move(tag), alphabet, alphabet, order) {}

CipherLanguage::CipherLanguage(std::string tag, std::string alphabet, std::string image, WordOrder order)
    : tag_(std::move(tag)), alphabet_(std::move(alphabet)), image_(std::move(image)), order_(order) {
  if (tag_.empty()) throw InvalidArgument("language tag must not be empty");
  if (alphabet_.size() != image_.size()) throw InvalidArgument("cipher image must match alphabet size");
  std::string a = alphabet_, b = image_;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b || std::adjacent_find(a.begin(), a.end()) != a.end()) {
    throw InvalidArgument("cipher for '" + tag_ + "' is not a bijection over its alphabet");
  }
  if (alphabet_.find(' ') != std::string::npos) throw InvalidArgument("cipher alphabet must not contain spaces");
  for (int c = 0; c < 256; ++c) forward_[c] = inverse_[c] = static_cast<char>(c);
  for (std::size_t i = 0; i < alphabet_.size(); ++i) {
    forward_[static_cast<unsigned char>(alphabet_[i])] = image_[i];
    inverse_[static_cast<unsigned char>(image_[i])] = alphabet_[i];
  }
}

CipherLanguage CipherLanguage::random(std::string tag, std::string alphabet, std::uint64_t seed,
                                      WordOrder order) {
  Rng rng(seed);
  std::vector<char> symbols(alphabet.begin(), alphabet.end());
  shuffle_in_place(symbols, rng);
  std::string image(symbols.begin(), symbols.end());
  return CipherLanguage(std::move(tag), std::move(alphabet), std::move(image), order);
}

std::string CipherLanguage::encipher(std::string_view base) const {
  std::string out = reorder(base, order_);
  for (char& c : out) c = forward_[static_cast<unsigned char>(c)];
  return out;
}

std::string CipherLanguage::decipher(std::string_view surface) const {
  std::string out(surface);
  for (char& c : out) c = inverse_[static_cast<unsigned char>(c)];
  return reorder(out, order_);
}

std::vector<ParallelExample> CipherCorpus::flat_train() const {
  std::vector<ParallelExample> out;
  for (const auto& d : directions) out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::vector<ParallelExample> CipherCorpus::flat_zero_shot() const {
  std::vector<ParallelExample> out;
  for (const auto& d : zero_shot_directions) out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::string random_base_sentence(const CipherCorpusRequest& request, const std::string& alphabet, Rng& rng) {
  const auto pick = [&](int lo, int hi) {
    return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
  };
  const int n_words = pick(request.min_words, request.max_words);
  std::string sentence;
  for (int w = 0; w < n_words; ++w) {
    const int len = pick(request.min_word_length, request.max_word_length);
    std::string word;
    for (int i = 0; i < len; ++i) word += alphabet[uniform_index(rng, alphabet.size())];
    const std::size_t needed = sentence.size() + (sentence.empty() ? 0 : 1) + word.size();
    if (needed > static_cast<std::size_t>(request.max_chars)) {
      if (sentence.empty()) sentence = word.substr(0, static_cast<std::size_t>(request.max_chars));
      break;
    }
    if (!sentence.empty()) sentence += ' ';
    sentence += word;
  }
  return sentence;
}

CipherCorpus gen_cipher_corpus(const CipherCorpusRequest& request) {
  if (request.n_per_pair < 1) throw InvalidArgument("n_per_pair must be >= 1");
  if (request.min_words < 1 || request.max_words < request.min_words || request.min_word_length < 1 ||
      request.max_word_length < request.min_word_length || request.max_chars < 1) {
    throw InvalidArgument("invalid sentence length range");
  }
  if (request.languages.empty()) throw InvalidArgument("no cipher languages given");
  const std::string& alphabet = request.languages.front().alphabet();
  for (const auto& lang : request.languages) {
    if (lang.alphabet() != alphabet) throw InvalidArgument("cipher languages must share one base alphabet");
  }

  Rng rng(request.seed);
  const auto render = [&](const std::vector<LanguagePair>& pairs) {
    std::vector<std::vector<ParallelExample>> out;
    for (const auto& pair : pairs) {
      if (pair.src == pair.tgt) throw InvalidArgument("language pair must join two different languages");
      const auto& a = find_language(request.languages, pair.src);
      const auto& b = find_language(request.languages, pair.tgt);
      std::vector<ParallelExample> forward, backward;
      for (int i = 0; i < request.n_per_pair; ++i) {
        const std::string base = random_base_sentence(request, alphabet, rng);
        std::string sa = a.encipher(base), sb = b.encipher(base);
        forward.push_back({sa, sb, a.tag(), b.tag()});
        backward.push_back({std::move(sb), std::move(sa), b.tag(), a.tag()});
      }
      out.push_back(std::move(forward));
      out.push_back(std::move(backward));
    }
    return out;
  };
  CipherCorpus corpus;
  corpus.directions = render(request.pairs);
  corpus.zero_shot_directions = render(request.zero_shot_pairs);
  return corpus;
}

LoadResult load_parallel_file(const std::string& path, std::string_view default_src_lang,
                              std::string_view default_tgt_lang) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open parallel corpus " + path);
  LoadResult result;
  std::string line;
  int line_no = 0, non_empty = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    ++non_empty;
    try {
      const auto obj = nlohmann::json::parse(line);
      if (!obj.is_object()) throw InvalidArgument("line is not a JSON object");
      ParallelExample ex;
      ex.src_text = obj.at("src").get<std::string>();
      ex.tgt_text = obj.at("tgt").get<std::string>();
      ex.src_lang = obj.contains("src_lang") ? obj["src_lang"].get<std::string>() : std::string(default_src_lang);
      ex.tgt_lang = obj.contains("tgt_lang") ? obj["tgt_lang"].get<std::string>() : std::string(default_tgt_lang);
      if (ex.src_lang.empty() || ex.tgt_lang.empty()) throw InvalidArgument("missing language tag");
      if (ex.src_lang == ex.tgt_lang) throw InvalidArgument("source and target language are equal");
      if (ex.src_text.empty() || ex.tgt_text.empty()) throw InvalidArgument("empty sentence");
      result.examples.push_back(std::move(ex));
    } catch (const std::exception& e) {
      result.diagnostics.push_back({line_no, e.what()});
    }
  }
  if (non_empty == 0) {
    result.diagnostics.push_back({0, "warning: " + path + " contains no examples"});
  } else if (result.examples.empty()) {
    throw IoError(path + ": every line is malformed (first error on line " +
                  std::to_string(result.diagnostics.front().line) + ": " + result.diagnostics.front().message + ")");
  }
  return result;
}

void save_parallel_file(const std::string& path, const std::vector<ParallelExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& ex : examples) {
    nlohmann::ordered_json obj;
    obj["src"] = ex.src_text;
    obj["tgt"] = ex.tgt_text;
    obj["src_lang"] = ex.src_lang;
    obj["tgt_lang"] = ex.tgt_lang;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path);
}

std::vector<ParallelExample> make_epoch(const std::vector<std::vector<ParallelExample>>& datasets,
                                        bool balance, std::uint64_t seed, std::uint64_t epoch) {
  std::size_t smallest = SIZE_MAX, total = 0;
  for (const auto& d : datasets) {
    if (!d.empty()) smallest = std::min(smallest, d.size());
    total += d.size();
  }
  if (total == 0) throw InvalidArgument("make_epoch: all datasets are empty");

  Rng rng(mix_seed(seed, epoch));
  std::vector<ParallelExample> stream;
  for (const auto& d : datasets) {
    if (d.empty()) continue;
    if (!balance || d.size() == smallest) {
      stream.insert(stream.end(), d.begin(), d.end());
      continue;
    }
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), 0);
    shuffle_in_place(idx, rng);
    idx.resize(smallest);
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) stream.push_back(d[i]);
  }
  shuffle_in_place(stream, rng);
  return stream;
}

}  // namespace diffmt
