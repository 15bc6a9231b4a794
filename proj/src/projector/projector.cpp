#include "treeproj/projector.hpp"

#include <json.hpp>

#include "treeproj/error.hpp"

namespace treeproj {

namespace {

double split_cost(const SciChart& chart, int i, int k, int j) { return chart.at(i, k) + chart.at(k + 1, j); }

double baseline_draw(const SciChart& chart, int i, int j, Rng& rng, int samples) {
  double total = 0.0;
  for (int s = 0; s < samples; ++s) {
    const int kb = static_cast<int>(uniform_int(rng, i, j - 1));
    total += split_cost(chart, i, kb, j);
  }
  return total / static_cast<double>(samples);
}

// Walks `tree` in preorder, drawing baselines in the same order greedy
// recursion would.
void accumulate(const SciChart& chart, const BinaryTree& tree, int id, Rng& rng, int samples,
                ProjectionResult& out) {
  const auto& node = tree.node(id);
  if (node.is_leaf()) return;
  const int i = node.span.start, j = node.span.end;
  const int k = tree.node(node.left).span.end;
  SplitRecord rec;
  rec.span = node.span;
  rec.split = k;
  rec.best_cost = split_cost(chart, i, k, j);
  rec.baseline_cost = baseline_draw(chart, i, j, rng, samples);
  out.cumulative_sci += chart.at(i, j);
  out.baseline_sum += rec.baseline_cost;
  out.split_sum += rec.best_cost;
  out.trace.push_back(rec);
  accumulate(chart, tree, node.left, rng, samples, out);
  accumulate(chart, tree, node.right, rng, samples, out);
}

void check_chart(const SciChart& chart) {
  expect(chart.n >= 1, "projection: chart must cover at least one token");
  expect(chart.values.size() == static_cast<std::size_t>(chart.n) * static_cast<std::size_t>(chart.n),
         "projection: chart storage does not match its length");
}

}  // namespace

ProjectionResult score_tree(const SciChart& chart, const BinaryTree& tree, Rng& rng, int samples_per_node) {
  check_chart(chart);
  expect(samples_per_node >= 1, "samples_per_node must be >= 1");
  expect(tree.leaves() == chart.n, "score_tree: tree and chart lengths differ");
  ProjectionResult out;
  out.tree = tree;
  accumulate(chart, tree, 0, rng, samples_per_node, out);
  out.normalized_score = out.baseline_sum - out.split_sum;
  return out;
}

ProjectionResult greedy_project(const SciChart& chart, Rng& rng, int samples_per_node) {
  check_chart(chart);
  BinaryTree tree = BinaryTree::from_splits(chart.n, [&](int i, int j) {
    int best = i;
    double best_cost = split_cost(chart, i, i, j);
    for (int k = i + 1; k < j; ++k) {
      const double c = split_cost(chart, i, k, j);
      if (c < best_cost) {
        best = k;
        best_cost = c;
      }
    }
    return best;
  });
  return score_tree(chart, tree, rng, samples_per_node);
}

ProjectionResult greedy_project(const SciChart& chart, std::uint64_t seed, int samples_per_node) {
  Rng rng(seed);
  return greedy_project(chart, rng, samples_per_node);
}

double cumulative_sci(const SciChart& chart, const BinaryTree& tree) {
  expect(tree.leaves() == chart.n, "cumulative_sci: tree and chart lengths differ");
  double total = 0.0;
  for (const Span& s : tree.brackets(true)) total += chart.at(s);
  return total;
}

ExactProjection exact_project(const SciChart& chart) {
  check_chart(chart);
  const int n = chart.n;
  std::vector<double> best(static_cast<std::size_t>(n * n), 0.0);
  std::vector<int> arg(static_cast<std::size_t>(n * n), -1);
  auto at = [n](int i, int j) { return static_cast<std::size_t>(i * n + j); };
  for (int len = 2; len <= n; ++len) {
    for (int i = 0; i + len - 1 < n; ++i) {
      const int j = i + len - 1;
      int bk = i;
      double bc = best[at(i, i)] + best[at(i + 1, j)];
      for (int k = i + 1; k < j; ++k) {
        const double c = best[at(i, k)] + best[at(k + 1, j)];
        if (c < bc) {
          bc = c;
          bk = k;
        }
      }
      best[at(i, j)] = chart.at(i, j) + bc;
      arg[at(i, j)] = bk;
    }
  }
  ExactProjection out;
  out.tree = BinaryTree::from_splits(n, [&](int i, int j) { return arg[at(i, j)]; });
  out.cumulative_sci = best[at(0, n - 1)];
  return out;
}

ProjectionMode parse_projection_mode(const std::string& name) {
  if (name == "greedy") return ProjectionMode::Greedy;
  if (name == "exact") return ProjectionMode::Exact;
  throw ContractViolation("unknown projection mode '" + name + "' (expected greedy or exact)");
}

BinaryTree project(const SciChart& chart, ProjectionMode mode) {
  if (mode == ProjectionMode::Exact) return exact_project(chart).tree;
  Rng unused(0);
  return greedy_project(chart, unused, 1).tree;
}

double t_score(std::span<const SciChart> charts, int samples_per_node, std::uint64_t seed, ProjectionMode mode) {
  expect(!charts.empty(), "t_score: empty dataset");
  double total = 0.0;
  for (std::size_t s = 0; s < charts.size(); ++s) {
    const SciChart& chart = charts[s];
    if (chart.n <= 2) continue;  // no structural choice
    Rng rng = make_rng(seed, "t_score/" + std::to_string(s));
    const BinaryTree tree = project(chart, mode);
    total += score_tree(chart, tree, rng, samples_per_node).normalized_score;
  }
  return total / static_cast<double>(charts.size());
}

double expected_sci_uniform_trees(const SciChart& chart) {
  check_chart(chart);
  const int n = chart.n;
  // count(i, j): number of trees over [i, j]; total(i, j): summed cumulative
  // SCI over those trees.
  std::vector<double> count(static_cast<std::size_t>(n * n), 1.0);
  std::vector<double> total(static_cast<std::size_t>(n * n), 0.0);
  auto at = [n](int i, int j) { return static_cast<std::size_t>(i * n + j); };
  for (int len = 2; len <= n; ++len) {
    for (int i = 0; i + len - 1 < n; ++i) {
      const int j = i + len - 1;
      double c = 0.0, t = 0.0;
      for (int k = i; k < j; ++k) {
        const double cl = count[at(i, k)], cr = count[at(k + 1, j)];
        c += cl * cr;
        t += total[at(i, k)] * cr + total[at(k + 1, j)] * cl;
      }
      count[at(i, j)] = c;
      total[at(i, j)] = t + c * chart.at(i, j);
    }
  }
  return total[at(0, n - 1)] / count[at(0, n - 1)];
}

double t_score_uniform(std::span<const SciChart> charts, ProjectionMode mode) {
  expect(!charts.empty(), "t_score_uniform: empty dataset");
  double total = 0.0;
  for (const SciChart& chart : charts) {
    if (chart.n <= 2) continue;
    total += expected_sci_uniform_trees(chart) - cumulative_sci(chart, project(chart, mode));
  }
  return total / static_cast<double>(charts.size());
}

std::string projection_to_json(const ProjectionResult& result, std::span<const std::string> tokens) {
  nlohmann::json j;
  j["tree"] = result.tree.to_sexpr(tokens);
  j["cumulative_sci"] = result.cumulative_sci;
  j["baseline_sum"] = result.baseline_sum;
  j["split_sum"] = result.split_sum;
  j["normalized_score"] = result.normalized_score;
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& r : result.trace)
    trace.push_back({{"span", {r.span.start, r.span.end}}, {"k", r.split}, {"s_best", r.best_cost},
                     {"s_baseline", r.baseline_cost}});
  j["trace"] = trace;
  return j.dump();
}

}  // namespace treeproj
