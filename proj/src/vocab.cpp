#include "edif/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "edif/error.hpp"

namespace edif {

namespace {

bool is_special_surface(std::string_view w) { return w == kStartToken || w == kPadToken; }

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<TokenId>(i));
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> words) {
  std::vector<std::string> sorted;
  sorted.reserve(words.size());
  for (const auto& w : words) {
    if (!w.empty() && !is_special_surface(w)) sorted.push_back(w);
  }
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.empty()) throw std::invalid_argument("empty vocabulary");

  std::vector<std::string> tokens;
  tokens.reserve(sorted.size() + kNumSpecials);
  tokens.emplace_back(kStartToken);
  tokens.emplace_back(kPadToken);
  tokens.insert(tokens.end(), sorted.begin(), sorted.end());
  return Vocabulary(std::move(tokens));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  if (tokens.size() < kNumSpecials || tokens[0] != kStartToken || tokens[1] != kPadToken) {
    throw FormatError("vocabulary file " + path.string() + " must start with [START] and [PAD]");
  }
  if (!std::is_sorted(tokens.begin() + kNumSpecials, tokens.end()) ||
      std::adjacent_find(tokens.begin() + kNumSpecials, tokens.end()) != tokens.end()) {
    throw FormatError("vocabulary file " + path.string() + " is not sorted and unique");
  }
  for (std::size_t i = kNumSpecials; i < tokens.size(); ++i) {
    if (is_special_surface(tokens[i])) throw FormatError("special token repeated in " + path.string());
  }
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

std::optional<TokenId> Vocabulary::find(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::encode(std::string_view word) const {
  if (auto id = find(word)) return *id;
  throw std::invalid_argument("unknown word '" + std::string(word) + "'");
}

const std::string& Vocabulary::decode(TokenId id) const {
  if (!contains(id)) throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode_text(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(encode(w));
  return ids;
}

std::string Vocabulary::decode_text(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += decode(ids[i]);
  }
  return out;
}

TokenId Vocabulary::sample_random_word(Rng& rng) const {
  if (num_words() == 0) throw std::invalid_argument("vocabulary has no non-special words to sample");
  return static_cast<TokenId>(kNumSpecials + uniform_index(rng, num_words()));
}

std::uint64_t Vocabulary::fingerprint() const {
  Fnv1a h;
  for (const auto& t : tokens_) h.update_str(t);
  return h.digest();
}

}  // namespace edif
