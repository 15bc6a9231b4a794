#include "treeproj/treeval.hpp"

#include <algorithm>
#include <optional>
#include <set>

#include "treeproj/error.hpp"

namespace treeproj {

Prf prf_from_counts(const BracketCounts& c) {
  Prf out;
  out.precision = c.predicted > 0 ? static_cast<double>(c.matched) / static_cast<double>(c.predicted)
                                  : (c.gold == 0 ? 1.0 : 0.0);
  out.recall = c.gold > 0 ? static_cast<double>(c.matched) / static_cast<double>(c.gold)
                          : (c.predicted == 0 ? 1.0 : 0.0);
  const double s = out.precision + out.recall;
  out.f1 = s > 0.0 ? 2.0 * out.precision * out.recall / s : 0.0;
  return out;
}

BracketCounts bracket_counts(const BinaryTree& pred, const BinaryTree& gold, const ParsevalOptions& options) {
  if (pred.leaves() != gold.leaves())
    throw ContractViolation("parseval: predicted tree has " + std::to_string(pred.leaves()) +
                            " leaves, gold has " + std::to_string(gold.leaves()));
  const auto p = pred.brackets(!options.exclude_root);
  const auto g = gold.brackets(!options.exclude_root);
  const std::set<Span> gold_set(g.begin(), g.end());
  BracketCounts out;
  out.predicted = p.size();
  out.gold = g.size();
  for (const Span& s : p) out.matched += gold_set.count(s);
  return out;
}

Prf parseval_f1(const BinaryTree& pred, const BinaryTree& gold, const ParsevalOptions& options) {
  return prf_from_counts(bracket_counts(pred, gold, options));
}

Prf corpus_parseval(std::span<const BinaryTree> pred, std::span<const BinaryTree> gold,
                    const ParsevalOptions& options) {
  expect(pred.size() == gold.size(), "corpus_parseval: sentence count mismatch");
  BracketCounts total;
  for (std::size_t i = 0; i < pred.size(); ++i) total += bracket_counts(pred[i], gold[i], options);
  return prf_from_counts(total);
}

BaselineKind parse_baseline_kind(const std::string& name) {
  if (name == "left") return BaselineKind::Left;
  if (name == "right") return BaselineKind::Right;
  if (name == "random") return BaselineKind::Random;
  throw ContractViolation("unknown baseline '" + name + "' (expected left, right or random)");
}

BinaryTree baseline_tree(int n, BaselineKind kind, Rng& rng) {
  switch (kind) {
    case BaselineKind::Left:
      return BinaryTree::from_splits(n, [](int, int j) { return j - 1; });
    case BaselineKind::Right:
      return BinaryTree::from_splits(n, [](int i, int) { return i; });
    case BaselineKind::Random:
      return BinaryTree::from_splits(n, [&rng](int i, int j) { return static_cast<int>(uniform_int(rng, i, j - 1)); });
  }
  throw ContractViolation("baseline_tree: bad kind");
}

BinaryTree baseline_tree(int n, BaselineKind kind, std::uint64_t seed) {
  Rng rng(seed);
  return baseline_tree(n, kind, rng);
}

std::vector<std::string> linearize(const BinaryTree& tree, std::span<const std::string> tokens) {
  expect(!tree.empty(), "linearize: empty tree");
  expect(static_cast<int>(tokens.size()) == tree.leaves(), "linearize: token count mismatch");
  std::vector<std::string> out;
  auto emit = [&](auto&& self, int id) -> void {
    const auto& node = tree.node(id);
    if (node.is_leaf()) {
      out.push_back(tokens[static_cast<std::size_t>(node.span.start)]);
      return;
    }
    out.emplace_back("(");
    self(self, node.left);
    self(self, node.right);
    out.emplace_back(")");
  };
  emit(emit, 0);
  return out;
}

namespace {

BinaryTree right_branch(std::vector<BinaryTree> items) {
  BinaryTree acc = std::move(items.back());
  for (std::size_t i = items.size() - 1; i-- > 0;) acc = BinaryTree::join(items[i], acc);
  return acc;
}

}  // namespace

Delinearized delinearize(std::span<const std::string> sequence, int expected_leaves) {
  // Stack entries: an open-bracket marker (nullopt) or a finished subtree.
  std::vector<std::optional<BinaryTree>> stack;
  bool repaired = false;
  for (const std::string& tok : sequence) {
    if (tok == "(") {
      stack.emplace_back(std::nullopt);
    } else if (tok == ")") {
      std::vector<BinaryTree> items;
      while (!stack.empty() && stack.back().has_value()) {
        items.push_back(std::move(*stack.back()));
        stack.pop_back();
      }
      if (stack.empty()) {
        // stray ')': keep the popped items where they were
        repaired = true;
        for (auto it = items.rbegin(); it != items.rend(); ++it) stack.emplace_back(std::move(*it));
        continue;
      }
      stack.pop_back();  // the marker
      std::reverse(items.begin(), items.end());
      if (items.empty()) {
        repaired = true;
        continue;
      }
      if (items.size() != 2) repaired = true;
      stack.emplace_back(items.size() == 1 ? std::move(items[0]) : right_branch(std::move(items)));
    } else {
      stack.emplace_back(BinaryTree::leaf(0));
    }
  }
  std::vector<BinaryTree> rest;
  for (auto& entry : stack) {
    if (entry.has_value())
      rest.push_back(std::move(*entry));
    else
      repaired = true;  // unclosed '('
  }
  Delinearized out;
  if (rest.size() > 1) repaired = true;
  if (!rest.empty()) out.tree = rest.size() == 1 ? std::move(rest[0]) : right_branch(std::move(rest));
  out.repaired = repaired;
  if (out.tree.empty() || (expected_leaves >= 1 && out.tree.leaves() != expected_leaves)) {
    const int n = expected_leaves >= 1 ? expected_leaves : std::max(1, out.tree.leaves());
    out.tree = baseline_tree(n, BaselineKind::Right, std::uint64_t{0});
    out.repaired = true;
  }
  return out;
}

}  // namespace treeproj
