#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "hallu/common.hpp"
#include "hallu/knowledge_graph.hpp"
#include "hallu/tokenizer.hpp"

namespace hallu {

struct PrefixVerdict {
  bool pair_known = false;
  // Length of the longest prefix of the query that is a trie path.
  std::size_t matched = 0;
  // Whole query is a path (the prefix of some valid object).
  bool valid_prefix = false;
  // Whole query is a complete valid object.
  bool complete = false;

  std::optional<std::size_t> first_invalid() const {
    if (valid_prefix) return std::nullopt;
    return matched;
  }
};

// One token-ID trie per (subject, predicate) pair over the tokenizations of
// the pair's objects. Terminal nodes mark complete objects.
class ObjectTrie {
 public:
  // Throws UntokenizableError naming the offending object.
  static ObjectTrie build(const KnowledgeGraph& kg, const TokenizerVocab& vocab);

  PrefixVerdict query(std::string_view subject, std::string_view predicate,
                      std::span<const TokenId> tokens) const;

  bool has_pair(std::string_view subject, std::string_view predicate) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }
  std::size_t terminal_count() const noexcept;

 private:
  using NodeId = std::uint32_t;
  struct Node {
    std::vector<std::pair<TokenId, NodeId>> children;  // sorted by token
    bool terminal = false;
  };

  NodeId child(NodeId node, TokenId tok) const;
  NodeId add_child(NodeId node, TokenId tok);

  static constexpr NodeId kNone = ~NodeId{0};
  std::vector<Node> nodes_;
  std::map<PairKey, NodeId, PairLess> roots_;
};

}  // namespace hallu
