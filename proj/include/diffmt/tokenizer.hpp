#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "diffmt/common.hpp"

namespace diffmt {

enum class TokenizerMode { Char, Word };

TokenizerMode parse_tokenizer_mode(std::string_view name);
std::string_view to_string(TokenizerMode mode);

/// Which stream a sequence feeds. Source sequences carry the language tags.
enum class Side { Source, Target };

/// Token inventory with [PAD], [UNK] and one tag per language.
///
/// Ids: 0 = [PAD], 1 = [UNK], 2.. = language tags in configuration order, then
/// content tokens by descending corpus frequency (ties broken
/// lexicographically).
class Vocabulary {
 public:
  static constexpr Token kPad = 0;
  static constexpr Token kUnk = 1;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";

  static Vocabulary build(const std::vector<std::string>& corpus, TokenizerMode mode, int max_size,
                          const std::vector<std::string>& languages);

  static Vocabulary load(std::istream& in);
  static Vocabulary load_file(const std::string& path);
  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  TokenizerMode mode() const { return mode_; }
  const std::vector<std::string>& languages() const { return languages_; }
  int special_count() const { return 2 + static_cast<int>(languages_.size()); }

  Token pad_id() const { return kPad; }
  Token unk_id() const { return kUnk; }
  /// Throws InvalidArgument for unknown tags.
  Token language_id(std::string_view lang) const;
  bool is_special(Token id) const { return id >= 0 && id < special_count(); }

  const std::string& token(Token id) const;
  std::optional<Token> find(std::string_view token) const;

  /// Splits text into tokens: UTF-8 code points in char mode, whitespace
  /// separated words in word mode.
  std::vector<std::string> split(std::string_view text) const;

  static std::string language_token(std::string_view lang) { return "<" + std::string(lang) + ">"; }

  bool operator==(const Vocabulary& other) const {
    return mode_ == other.mode_ && tokens_ == other.tokens_ && languages_ == other.languages_;
  }

 private:
  Vocabulary(TokenizerMode mode, std::vector<std::string> languages, std::vector<std::string> tokens);

  TokenizerMode mode_;
  std::vector<std::string> languages_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, Token> index_;
};

/// Fixed-length encoding. Source: [<src>, <tgt>, tokens..., PAD...];
/// target: [tokens..., PAD...]. Both truncated or padded to exactly `length`.
TokenSequence encode(std::string_view text, std::string_view src_lang, std::string_view tgt_lang,
                     const Vocabulary& vocab, int length, Side side);

/// Concatenates content tokens, skipping specials wherever they occur. Word
/// mode joins with single spaces.
std::string decode(std::span<const Token> seq, const Vocabulary& vocab);

}  // namespace diffmt
