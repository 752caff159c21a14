#include "tspnet/vocabulary.hpp"

#include <algorithm>
#include <set>

#include "tspnet/errors.hpp"

namespace tspnet {

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Vocabulary::Vocabulary() {
  for (const char* w : {"<pad>", "<bos>", "<eos>", "<unk>"}) {
    index_.emplace(w, static_cast<TokenId>(words_.size()));
    words_.emplace_back(w);
  }
}

Vocabulary Vocabulary::build(std::span<const std::string> texts) {
  std::set<std::string> distinct;
  for (const auto& t : texts) {
    for (auto& w : split_whitespace(t)) distinct.insert(std::move(w));
  }
  return from_words({distinct.begin(), distinct.end()});
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words) {
  Vocabulary v;
  for (auto& w : words) {
    if (v.index_.contains(w)) continue;
    v.index_.emplace(w, static_cast<TokenId>(v.words_.size()));
    v.words_.push_back(std::move(w));
  }
  return v;
}

TokenId Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::word(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw PreconditionError("token id " + std::to_string(id) + " outside vocabulary of " +
                            std::to_string(words_.size()));
  }
  return words_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_whitespace(text)) ids.push_back(id(w));
  ids.push_back(kEosId);
  return ids;
}

std::vector<std::string> Vocabulary::words_of(std::span<const TokenId> ids) const {
  std::vector<std::string> out;
  for (TokenId t : ids) {
    if (t == kEosId) break;
    if (t == kPadId || t == kBosId) continue;
    out.push_back(word(t));
  }
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (const auto& w : words_of(ids)) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace tspnet
