#include "hallu/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

namespace hallu {

UntokenizableError::UntokenizableError(std::string text)
    : Error(fmt::format("cannot tokenize '{}'", text)), text_(std::move(text)) {}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const auto start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.push_back(text.substr(start, i - start));
  }
  return out;
}

TokenizerVocab::TokenizerVocab() {
  for (auto lit : {kPadLiteral, kSubjectLiteral, kPredicateLiteral, kObjectLiteral, kEosLiteral}) {
    ids_.emplace(std::string(lit), static_cast<TokenId>(tokens_.size()));
    tokens_.emplace_back(lit);
  }
}

TokenizerVocab TokenizerVocab::from_tokens(std::vector<std::string> regular_tokens) {
  std::sort(regular_tokens.begin(), regular_tokens.end());
  regular_tokens.erase(std::unique(regular_tokens.begin(), regular_tokens.end()),
                       regular_tokens.end());
  TokenizerVocab v;
  for (auto& tok : regular_tokens) {
    if (tok.empty() || is_special_literal(tok) ||
        std::any_of(tok.begin(), tok.end(),
                    [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      throw Error(fmt::format("invalid vocabulary token '{}'", tok));
    }
    v.ids_.emplace(tok, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(std::move(tok));
  }
  return v;
}

TokenizerVocab TokenizerVocab::build(const KnowledgeGraph& kg) {
  std::set<std::string, std::less<>> seen;
  for (const auto& t : kg.triplets()) {
    for (const auto* field : {&t.subject, &t.predicate, &t.object}) {
      for (auto tok : split_whitespace(*field)) {
        if (seen.find(tok) == seen.end()) seen.emplace(tok);
      }
    }
  }
  return from_tokens(std::vector<std::string>(seen.begin(), seen.end()));
}

std::optional<TokenId> TokenizerVocab::id(std::string_view token) const {
  const auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::string_view TokenizerVocab::token(TokenId id) const {
  if (id >= tokens_.size()) throw Error(fmt::format("token id {} out of range", id));
  return tokens_[id];
}

std::vector<TokenId> TokenizerVocab::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  for (auto tok : split_whitespace(text)) {
    const auto it = ids_.find(tok);
    if (it == ids_.end() || is_special_token(it->second)) {
      throw UntokenizableError(std::string(text));
    }
    out.push_back(it->second);
  }
  if (out.empty()) throw UntokenizableError(std::string(text));
  return out;
}

std::string TokenizerVocab::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += token(ids[i]);
  }
  return out;
}

void TokenizerVocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << tokens_[i] << '\t' << i << '\n';
}

TokenizerVocab TokenizerVocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("cannot open vocabulary {}", path.string()));
  std::vector<std::string> regular;
  std::vector<std::string> all;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw ParseError(fmt::format("{}:{}: expected token<TAB>id", path.string(), lineno + 1),
                       lineno + 1);
    }
    const auto tok = line.substr(0, tab);
    all.push_back(tok);
    const auto id = std::stoull(line.substr(tab + 1));
    if (id != lineno) {
      throw ParseError(fmt::format("{}:{}: ids must be dense and ordered", path.string(), lineno + 1),
                       lineno + 1);
    }
    if (id >= kFirstRegularToken) regular.push_back(tok);
    ++lineno;
  }
  auto v = from_tokens(regular);
  if (v.tokens_ != all) {
    throw ParseError(fmt::format("{}: special tokens misplaced or tokens not sorted/unique",
                                 path.string()),
                     lineno);
  }
  return v;
}

}  // namespace hallu
