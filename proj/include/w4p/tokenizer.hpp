#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace w4p {

namespace token {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kMask = 4;
inline constexpr int kNumSpecial = 5;
}  // namespace token

inline constexpr int kMaxTokens = 77;

// Fixed-length id sequence: BOS ... EOS followed by PAD up to max_len.
struct TokenSequence {
  std::vector<int> token_ids;
  int length = 0;  // non-PAD tokens, BOS and EOS included

  bool operator==(const TokenSequence&) const = default;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  // Rows 0..4 must be the special tokens in token:: order.
  explicit Vocabulary(std::vector<std::string> words);

  // Specials, the template words, then corpus words by descending frequency
  // (ties alphabetical) up to `capacity` entries.
  static Vocabulary build(std::span<const std::string> texts, std::size_t capacity = 1000);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  int size() const { return static_cast<int>(words_.size()); }
  int id(std::string_view word) const;  // kUnk when absent
  std::optional<int> find(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& words() const { return words_; }

  // BPE-style vocabularies mark word-final pieces with a "</w>" suffix; a
  // piece without it is only part of a word. Plain word lists are all final.
  bool is_word_final(int id) const;
  std::string display(int id) const;

  bool operator==(const Vocabulary& o) const { return words_ == o.words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
  bool bpe_style_ = false;
};

// Lowercases ASCII, splits on whitespace and isolates punctuation marks.
std::vector<std::string> split_words(std::string_view text);

// Desk-scale whitespace tokenizer.
class Tokenizer {
 public:
  Tokenizer() = default;
  explicit Tokenizer(Vocabulary vocab, int max_len = kMaxTokens);

  TokenSequence tokenize(std::string_view text) const;
  // Word ids without BOS/EOS and without truncation.
  std::vector<int> encode_words(std::string_view text) const;
  std::string detokenize(const TokenSequence& seq) const;
  std::string decode(std::span<const int> ids) const;

  const Vocabulary& vocab() const { return vocab_; }
  int max_len() const { return max_len_; }

 private:
  Vocabulary vocab_;
  int max_len_ = kMaxTokens;
};

}  // namespace w4p
