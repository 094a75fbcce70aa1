#include "w4p/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "w4p/error.hpp"

namespace w4p {

namespace {

const std::vector<std::string>& special_words() {
  static const std::vector<std::string> kWords = {"<pad>", "<bos>", "<eos>", "<unk>", "<mask>"};
  return kWords;
}

constexpr std::string_view kWordEnd = "</w>";

bool is_punct(char c) {
  switch (c) {
    case '.': case ',': case ';': case ':': case '!': case '?': case '"': case '(': case ')':
      return true;
    default:
      return false;
  }
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  const auto& specials = special_words();
  require(words_.size() >= specials.size() && std::equal(specials.begin(), specials.end(), words_.begin()),
          ErrorKind::InvalidArgument, "vocabulary must start with <pad> <bos> <eos> <unk> <mask>");
  for (std::size_t i = 0; i < words_.size(); ++i) {
    require(!words_[i].empty(), ErrorKind::InvalidArgument, "vocabulary: empty word at row " + std::to_string(i));
    require(index_.emplace(words_[i], static_cast<int>(i)).second, ErrorKind::InvalidArgument,
            "vocabulary: duplicate word '" + words_[i] + "'");
    if (ends_with(words_[i], kWordEnd)) bpe_style_ = true;
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts, std::size_t capacity) {
  std::vector<std::string> words = special_words();
  for (const char* w : {"a", "photo", "of", "is"}) words.emplace_back(w);
  require(capacity >= words.size(), ErrorKind::InvalidArgument, "vocabulary capacity too small");

  std::map<std::string, std::size_t> freq;
  for (const auto& t : texts)
    for (auto& w : split_words(t)) ++freq[w];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [w, n] : ranked) {
    if (words.size() >= capacity) break;
    if (std::find(words.begin(), words.end(), w) == words.end()) words.push_back(w);
  }
  return Vocabulary(std::move(words));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open vocabulary " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    words.push_back(line);
  }
  return Vocabulary(std::move(words));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write vocabulary " + path.string());
  for (const auto& w : words_) out << w << '\n';
}

std::optional<int> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view word) const {
  if (bpe_style_) {
    if (auto f = find(std::string(word) + std::string(kWordEnd))) return *f;
  }
  return find(word).value_or(token::kUnk);
}

bool Vocabulary::is_word_final(int id) const {
  if (id < token::kNumSpecial || !bpe_style_) return true;
  return ends_with(word(id), kWordEnd);
}

std::string Vocabulary::display(int id) const {
  const std::string& w = word(id);
  if (bpe_style_ && ends_with(w, kWordEnd)) return w.substr(0, w.size() - kWordEnd.size());
  return w;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isspace(u)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
    }
  }
  flush();
  return out;
}

Tokenizer::Tokenizer(Vocabulary vocab, int max_len) : vocab_(std::move(vocab)), max_len_(max_len) {
  require(max_len_ >= 2, ErrorKind::InvalidArgument, "tokenizer: max_len must leave room for BOS and EOS");
}

std::vector<int> Tokenizer::encode_words(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(vocab_.id(w));
  return ids;
}

TokenSequence Tokenizer::tokenize(std::string_view text) const {
  auto words = encode_words(text);
  const auto room = static_cast<std::size_t>(max_len_ - 2);
  if (words.size() > room) words.resize(room);
  TokenSequence seq;
  seq.token_ids.assign(static_cast<std::size_t>(max_len_), token::kPad);
  seq.token_ids[0] = token::kBos;
  std::copy(words.begin(), words.end(), seq.token_ids.begin() + 1);
  seq.token_ids[words.size() + 1] = token::kEos;
  seq.length = static_cast<int>(words.size()) + 2;
  return seq;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  bool join_next = false;
  for (int id : ids) {
    if (id == token::kPad || id == token::kBos || id == token::kEos) continue;
    if (!out.empty() && !join_next) out.push_back(' ');
    out += vocab_.display(id);
    join_next = !vocab_.is_word_final(id);
  }
  return out;
}

std::string Tokenizer::detokenize(const TokenSequence& seq) const {
  return decode(std::span<const int>(seq.token_ids.data(), static_cast<std::size_t>(seq.length)));
}

}  // namespace w4p
