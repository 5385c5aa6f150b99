#include "hallu/object_trie.hpp"

#include <algorithm>

#include <fmt/format.h>

namespace hallu {

ObjectTrie ObjectTrie::build(const KnowledgeGraph& kg, const TokenizerVocab& vocab) {
  ObjectTrie trie;
  for (const auto& [key, objects] : kg.pair_index()) {
    const auto root = static_cast<NodeId>(trie.nodes_.size());
    trie.nodes_.emplace_back();
    trie.roots_.emplace(key, root);
    for (const auto& object : objects) {
      std::vector<TokenId> toks;
      try {
        toks = vocab.tokenize(object);
      } catch (const UntokenizableError&) {
        throw UntokenizableError(object);
      }
      NodeId node = root;
      for (auto tok : toks) {
        const auto next = trie.child(node, tok);
        node = next != kNone ? next : trie.add_child(node, tok);
      }
      trie.nodes_[node].terminal = true;
    }
  }
  return trie;
}

ObjectTrie::NodeId ObjectTrie::child(NodeId node, TokenId tok) const {
  const auto& ch = nodes_[node].children;
  const auto it = std::lower_bound(ch.begin(), ch.end(), tok,
                                   [](const auto& e, TokenId t) { return e.first < t; });
  if (it == ch.end() || it->first != tok) return kNone;
  return it->second;
}

ObjectTrie::NodeId ObjectTrie::add_child(NodeId node, TokenId tok) {
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.emplace_back();
  auto& ch = nodes_[node].children;
  const auto it = std::lower_bound(ch.begin(), ch.end(), tok,
                                   [](const auto& e, TokenId t) { return e.first < t; });
  ch.insert(it, {tok, id});
  return id;
}

PrefixVerdict ObjectTrie::query(std::string_view subject, std::string_view predicate,
                                std::span<const TokenId> tokens) const {
  PrefixVerdict v;
  const auto it = roots_.find(std::pair{subject, predicate});
  if (it == roots_.end()) return v;
  v.pair_known = true;
  NodeId node = it->second;
  for (auto tok : tokens) {
    const auto next = child(node, tok);
    if (next == kNone) return v;
    node = next;
    ++v.matched;
  }
  v.valid_prefix = true;
  v.complete = nodes_[node].terminal;
  return v;
}

bool ObjectTrie::has_pair(std::string_view subject, std::string_view predicate) const {
  return roots_.find(std::pair{subject, predicate}) != roots_.end();
}

std::size_t ObjectTrie::terminal_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.terminal; }));
}

}  // namespace hallu
