#include "diffmt/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>

namespace diffmt {

namespace {

constexpr std::string_view kMagic = "diffmt-vocab";
constexpr int kFormatVersion = 1;

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xe) return 3;
  if ((lead >> 3) == 0x1e) return 4;
  return 1;  // stray continuation byte: treat as its own symbol
}

std::string escape(std::string_view token) {
  std::string out;
  for (char c : token) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case ' ': out += "\\s"; break;
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out;
}

std::string unescape(std::string_view line) {
  std::string out;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] != '\\' || i + 1 == line.size()) {
      out += line[i];
      continue;
    }
    switch (line[++i]) {
      case 's': out += ' '; break;
      case 't': out += '\t'; break;
      case 'n': out += '\n'; break;
      case 'r': out += '\r'; break;
      default: out += line[i];
    }
  }
  return out;
}

}  // namespace

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "char") return TokenizerMode::Char;
  if (name == "word") return TokenizerMode::Word;
  throw InvalidArgument("unknown tokenizer mode '" + std::string(name) + "'");
}

std::string_view to_string(TokenizerMode mode) { return mode == TokenizerMode::Char ? "char" : "word"; }

Vocabulary::Vocabulary(TokenizerMode mode, std::vector<std::string> languages,
                       std::vector<std::string> tokens)
    : mode_(mode), languages_(std::move(languages)), tokens_(std::move(tokens)) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<Token>(i)).second) {
      throw InvalidArgument("duplicate vocabulary entry '" + tokens_[i] + "'");
    }
  }
}

std::vector<std::string> Vocabulary::split(std::string_view text) const {
  std::vector<std::string> out;
  if (mode_ == TokenizerMode::Char) {
    for (std::size_t i = 0; i < text.size();) {
      const std::size_t n = std::min(utf8_length(static_cast<unsigned char>(text[i])), text.size() - i);
      out.emplace_back(text.substr(i, n));
      i += n;
    }
    return out;
  }
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

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, TokenizerMode mode, int max_size,
                             const std::vector<std::string>& languages) {
  if (corpus.empty()) throw InvalidArgument("cannot build a vocabulary from an empty corpus");
  const int specials = 2 + static_cast<int>(languages.size());
  if (max_size < specials + 2) {
    throw InvalidArgument("max vocabulary size " + std::to_string(max_size) + " cannot hold " +
                          std::to_string(specials) + " specials plus 2 content tokens");
  }
  std::vector<std::string> tokens{std::string(kPadToken), std::string(kUnkToken)};
  for (const auto& lang : languages) tokens.push_back(language_token(lang));

  const Vocabulary splitter(mode, languages, tokens);
  std::map<std::string, long> counts;
  for (const auto& line : corpus) {
    for (auto& tok : splitter.split(line)) ++counts[tok];
  }
  for (const auto& tok : tokens) counts.erase(tok);

  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const auto keep = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(max_size - specials));
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(mode, languages, std::move(tokens));
}

Token Vocabulary::language_id(std::string_view lang) const {
  for (std::size_t i = 0; i < languages_.size(); ++i) {
    if (languages_[i] == lang) return static_cast<Token>(2 + i);
  }
  throw InvalidArgument("unknown language tag '" + std::string(lang) + "'");
}

const std::string& Vocabulary::token(Token id) const {
  if (id < 0 || id >= size()) throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<Token> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::save(std::ostream& out) const {
  out << kMagic << ' ' << kFormatVersion << '\n';
  out << "mode " << to_string(mode_) << '\n';
  out << "specials " << special_count();
  for (Token i = 0; i < special_count(); ++i) out << ' ' << tokens_[i];
  out << '\n';
  out << "size " << size() << '\n';
  for (const auto& tok : tokens_) out << escape(tok) << '\n';
}

void Vocabulary::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary file " + path);
  save(out);
  if (!out) throw IoError("failed writing vocabulary file " + path);
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::string magic, key, mode_name;
  int version = 0, n_specials = 0, n_tokens = 0;
  if (!(in >> magic >> version) || magic != kMagic) throw IoError("not a vocabulary file");
  if (version != kFormatVersion) throw IoError("unsupported vocabulary version " + std::to_string(version));
  if (!(in >> key >> mode_name) || key != "mode") throw IoError("vocabulary: missing mode line");
  const TokenizerMode mode = parse_tokenizer_mode(mode_name);
  if (!(in >> key >> n_specials) || key != "specials" || n_specials < 2) {
    throw IoError("vocabulary: missing specials line");
  }
  std::vector<std::string> specials(static_cast<std::size_t>(n_specials));
  for (auto& s : specials) in >> s;
  if (!(in >> key >> n_tokens) || key != "size" || n_tokens < n_specials) {
    throw IoError("vocabulary: missing size line");
  }
  std::string line;
  std::getline(in, line);
  std::vector<std::string> tokens;
  for (int i = 0; i < n_tokens; ++i) {
    if (!std::getline(in, line)) throw IoError("vocabulary: truncated token list");
    tokens.push_back(unescape(line));
  }
  if (specials[0] != kPadToken || specials[1] != kUnkToken) throw IoError("vocabulary: bad special tokens");
  std::vector<std::string> languages;
  for (int i = 0; i < n_specials; ++i) {
    if (tokens[i] != specials[i]) throw IoError("vocabulary: special token ids do not match header");
    if (i >= 2) {
      const auto& s = specials[i];
      if (s.size() < 3 || s.front() != '<' || s.back() != '>') throw IoError("vocabulary: bad language tag " + s);
      languages.push_back(s.substr(1, s.size() - 2));
    }
  }
  return Vocabulary(mode, std::move(languages), std::move(tokens));
}

Vocabulary Vocabulary::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open vocabulary file " + path);
  return load(in);
}

TokenSequence encode(std::string_view text, std::string_view src_lang, std::string_view tgt_lang,
                     const Vocabulary& vocab, int length, Side side) {
  if (length < 1) throw InvalidArgument("sequence length must be positive");
  const Token src_id = vocab.language_id(src_lang);
  const Token tgt_id = vocab.language_id(tgt_lang);
  TokenSequence ids;
  ids.reserve(static_cast<std::size_t>(length));
  if (side == Side::Source) {
    ids.push_back(src_id);
    ids.push_back(tgt_id);
  }
  for (const auto& tok : vocab.split(text)) {
    if (static_cast<int>(ids.size()) >= length) break;
    ids.push_back(vocab.find(tok).value_or(vocab.unk_id()));
  }
  ids.resize(static_cast<std::size_t>(length), vocab.pad_id());
  return ids;
}

std::string decode(std::span<const Token> seq, const Vocabulary& vocab) {
  std::string out;
  bool first = true;
  for (Token id : seq) {
    if (vocab.is_special(id)) continue;
    if (vocab.mode() == TokenizerMode::Word && !first) out += ' ';
    out += vocab.token(id);
    first = false;
  }
  return out;
}

}  // namespace diffmt
