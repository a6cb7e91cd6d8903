#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "edif/random.hpp"

namespace edif {

using TokenId = std::int32_t;

inline constexpr TokenId kStartId = 0;
inline constexpr TokenId kPadId = 1;
inline constexpr std::size_t kNumSpecials = 2;
inline constexpr std::string_view kStartToken = "[START]";
inline constexpr std::string_view kPadToken = "[PAD]";

/// Word-level vocabulary. Ids are dense; [START]=0 and [PAD]=1 come first and
/// the remaining words follow in lexicographic order. Immutable once built.
class Vocabulary {
 public:
  /// Deduplicates and sorts `words`; special surface strings are ignored.
  /// Throws std::invalid_argument("empty vocabulary") if nothing remains.
  static Vocabulary build(std::span<const std::string> words);

  /// Reads the newline-delimited format written by save(). A file holding
  /// only the two special lines is accepted.
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return tokens_.size(); }
  std::size_t num_words() const { return tokens_.size() - kNumSpecials; }

  std::optional<TokenId> find(std::string_view word) const;
  TokenId encode(std::string_view word) const;
  const std::string& decode(TokenId id) const;
  bool is_special(TokenId id) const { return id == kStartId || id == kPadId; }
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }

  /// Whitespace-separated words to ids; unknown words throw.
  std::vector<TokenId> encode_text(std::string_view text) const;
  std::string decode_text(std::span<const TokenId> ids) const;

  /// Uniform draw over the non-special ids (the random-word absorbing state).
  TokenId sample_random_word(Rng& rng) const;

  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t fingerprint() const;

 private:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::vector<std::string> split_words(std::string_view text);

}  // namespace edif
