#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tspnet/ops.hpp"

namespace tspnet {

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kBosId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr TokenId kNumSpecialTokens = 4;

std::vector<std::string> split_whitespace(std::string_view text);

/// Whitespace word vocabulary. Ids 0..3 are <pad>, <bos>, <eos>, <unk>;
/// words follow in lexicographic order.
class Vocabulary {
 public:
  Vocabulary();
  /// Builds from the distinct words of `texts`.
  static Vocabulary build(std::span<const std::string> texts);
  static Vocabulary from_words(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  TokenId id(std::string_view word) const;
  const std::string& word(TokenId id) const;
  /// Words of `text` mapped to ids, terminated by <eos>.
  std::vector<TokenId> encode(std::string_view text) const;
  /// Ids up to the first <eos>, skipping <pad>/<bos>, joined by spaces.
  std::string decode(std::span<const TokenId> ids) const;
  /// Ids up to the first <eos> as words, skipping <pad>/<bos>.
  std::vector<std::string> words_of(std::span<const TokenId> ids) const;

  /// Every entry including the specials, in id order.
  const std::vector<std::string>& entries() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace tspnet
