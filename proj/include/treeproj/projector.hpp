#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "treeproj/rng.hpp"
#include "treeproj/spanrep.hpp"
#include "treeproj/tree.hpp"

namespace treeproj {

struct SplitRecord {
  Span span;
  int split = 0;              // k: left child is [i, k]
  double best_cost = 0.0;     // sci(i, k) + sci(k + 1, j)
  double baseline_cost = 0.0; // mean over random splits of the same sum
};

struct ProjectionResult {
  BinaryTree tree;
  // Sum of chart entries over internal spans (root included, leaves excluded).
  double cumulative_sci = 0.0;
  // Sums of baseline_cost / best_cost over internal nodes.
  double baseline_sum = 0.0;
  double split_sum = 0.0;
  // baseline_sum - split_sum.
  double normalized_score = 0.0;
  std::vector<SplitRecord> trace;
};

// Top-down greedy SCI minimisation: at span [i, j] pick the k minimising
// sci(i, k) + sci(k + 1, j) (smallest k on ties) and recurse. At every node
// `samples_per_node` uniform split points are drawn for the normalisation
// baseline.
ProjectionResult greedy_project(const SciChart& chart, Rng& rng, int samples_per_node = 1);
ProjectionResult greedy_project(const SciChart& chart, std::uint64_t seed, int samples_per_node = 1);

// Normalised score of a fixed tree: the same baseline draws as above, taken
// along the given tree's nodes.
ProjectionResult score_tree(const SciChart& chart, const BinaryTree& tree, Rng& rng, int samples_per_node = 1);

struct ExactProjection {
  BinaryTree tree;
  double cumulative_sci = 0.0;
};

// Global minimiser of cumulative SCI over all binary trees (CKY-style DP,
// smallest k on ties).
ExactProjection exact_project(const SciChart& chart);

// Sum over internal spans of `tree` (root included, leaves excluded).
double cumulative_sci(const SciChart& chart, const BinaryTree& tree);

enum class ProjectionMode { Greedy, Exact };
ProjectionMode parse_projection_mode(const std::string& name);

// Mean over sentences of (expected SCI under per-node uniform splits -
// SCI of the induced tree), i.e. the mean normalised score. Each sentence
// draws from its own stream derived from `seed`.
double t_score(std::span<const SciChart> charts, int samples_per_node, std::uint64_t seed,
               ProjectionMode mode = ProjectionMode::Greedy);

// Exact expectation of cumulative SCI under the uniform distribution over
// all binary trees of the chart's length (dynamic programming over counts).
double expected_sci_uniform_trees(const SciChart& chart);
// As t_score, but normalised against the uniform-over-trees expectation.
double t_score_uniform(std::span<const SciChart> charts, ProjectionMode mode = ProjectionMode::Greedy);

// Induced tree for one chart under the given mode.
BinaryTree project(const SciChart& chart, ProjectionMode mode);

// "{tree, cumulative_sci, baseline_sum, normalized_score, trace:[...]}"
std::string projection_to_json(const ProjectionResult& result, std::span<const std::string> tokens = {});

}  // namespace treeproj
