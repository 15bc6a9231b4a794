#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "treeproj/spanrep.hpp"

namespace treeproj {

// Strictly binary tree over token indices 0..n-1 (left to right).
class BinaryTree {
 public:
  struct Node {
    Span span;
    int left = -1;   // child node indices, -1 for leaves
    int right = -1;
    bool is_leaf() const { return left < 0; }
  };

  BinaryTree() = default;

  static BinaryTree leaf(int index = 0);
  // Builds the tree over [0, n) choosing split(i, j) = k in [i, j) for
  // each internal span [i, j]; the left child is [i, k].
  static BinaryTree from_splits(int n, const std::function<int(int, int)>& split);
  // Joins two trees; `right`'s leaves are shifted past `left`'s.
  static BinaryTree join(const BinaryTree& left, const BinaryTree& right);

  int leaves() const { return nodes_.empty() ? 0 : nodes_[0].span.length(); }
  bool empty() const { return nodes_.empty(); }
  const Node& root() const { return nodes_.at(0); }
  const Node& node(int index) const { return nodes_.at(static_cast<std::size_t>(index)); }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Spans of internal nodes (length >= 2) in preorder; optionally without the root.
  std::vector<Span> brackets(bool include_root = true) const;
  // Split point k of the internal node covering `span`, or -1 if `span` is
  // not a constituent.
  int split_of(Span span) const;
  // Every constituent (leaves included) in preorder.
  std::vector<Span> constituents() const;

  // "((w0 w1) w2)"; uses w<i> when `tokens` is empty.
  std::string to_sexpr(std::span<const std::string> tokens = {}) const;

  bool operator==(const BinaryTree& other) const;

 private:
  int build(int start, int end, const std::function<int(int, int)>& split);
  std::vector<Node> nodes_;
};

struct ParsedTree {
  BinaryTree tree;
  std::vector<std::string> tokens;
};

// Parses a strictly binary s-expression such as "((a b) c)" or a single
// atom. Throws ContractViolation describing the first problem.
ParsedTree parse_sexpr(const std::string& text);

}  // namespace treeproj
