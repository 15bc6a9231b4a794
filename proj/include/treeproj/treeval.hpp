#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treeproj/rng.hpp"
#include "treeproj/tree.hpp"

namespace treeproj {

struct ParsevalOptions {
  // Drop the full-sentence bracket from both sides.
  bool exclude_root = false;
};

// Unlabelled bracket counts; spans of length >= 2.
struct BracketCounts {
  std::size_t matched = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;

  BracketCounts& operator+=(const BracketCounts& o) {
    matched += o.matched;
    predicted += o.predicted;
    gold += o.gold;
    return *this;
  }
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Empty bracket sets on both sides score 1.0.
Prf prf_from_counts(const BracketCounts& counts);

BracketCounts bracket_counts(const BinaryTree& pred, const BinaryTree& gold, const ParsevalOptions& options = {});
Prf parseval_f1(const BinaryTree& pred, const BinaryTree& gold, const ParsevalOptions& options = {});
// Micro-averaged over sentences (counts summed before dividing).
Prf corpus_parseval(std::span<const BinaryTree> pred, std::span<const BinaryTree> gold,
                    const ParsevalOptions& options = {});

enum class BaselineKind { Left, Right, Random };
BaselineKind parse_baseline_kind(const std::string& name);

// Left: ((w0 w1) w2) ...; right: (w0 (w1 (w2 ...))); random: uniform split
// point at every node, drawn from `rng`.
BinaryTree baseline_tree(int n, BaselineKind kind, Rng& rng);
BinaryTree baseline_tree(int n, BaselineKind kind, std::uint64_t seed);

// "( ( w0 w1 ) w2 )" as a token stream; a single leaf is just its token.
std::vector<std::string> linearize(const BinaryTree& tree, std::span<const std::string> tokens);

struct Delinearized {
  BinaryTree tree;
  bool repaired = false;
};

// Parses a bracket stream back into a tree. Repairs malformed input:
// stray ')' and unclosed '(' are dropped, brackets with more than two
// children and any uncovered material are right-branched. If the result
// does not have `expected_leaves` leaves (when >= 1), or has no leaves at
// all, falls back to a right-branching tree over expected_leaves tokens.
Delinearized delinearize(std::span<const std::string> sequence, int expected_leaves = -1);

}  // namespace treeproj
