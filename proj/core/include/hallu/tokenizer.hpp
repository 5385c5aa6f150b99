#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hallu/common.hpp"
#include "hallu/knowledge_graph.hpp"

namespace hallu {

class UntokenizableError : public Error {
 public:
  explicit UntokenizableError(std::string text);
  const std::string& text() const noexcept { return text_; }

 private:
  std::string text_;
};

std::vector<std::string_view> split_whitespace(std::string_view text);

// Closed whitespace vocabulary. IDs 0..4 are the special tokens; regular
// tokens follow in lexicographic order.
class TokenizerVocab {
 public:
  TokenizerVocab();

  // Every whitespace token of every subject/predicate/object in `kg`.
  static TokenizerVocab build(const KnowledgeGraph& kg);
  static TokenizerVocab from_tokens(std::vector<std::string> regular_tokens);

  static TokenizerVocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  std::optional<TokenId> id(std::string_view token) const;
  std::string_view token(TokenId id) const;

  std::vector<TokenId> tokenize(std::string_view text) const;
  // Regular tokens joined with single spaces; special tokens as literals.
  std::string decode(std::span<const TokenId> ids) const;

  friend bool operator==(const TokenizerVocab& a, const TokenizerVocab& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId, std::less<>> ids_;
};

}  // namespace hallu
