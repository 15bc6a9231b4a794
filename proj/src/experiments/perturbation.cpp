#include <cmath>
#include <optional>

#include <json.hpp>

#include "batch.hpp"
#include "treeproj/error.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/parallel.hpp"

namespace treeproj {

namespace {

struct Triple {
  std::size_t sentence;
  Span constituent;
  int word;
  int distance;
};

// Non-root constituents (length >= 2) no deeper than max_depth (0 = any).
std::vector<Span> usable_constituents(const BinaryTree& tree, int max_depth) {
  std::vector<Span> out;
  if (tree.empty()) return out;
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [id, depth] = stack.back();
    stack.pop_back();
    const auto& node = tree.node(id);
    if (node.is_leaf()) continue;
    if (depth > 0 && (max_depth == 0 || depth <= max_depth)) out.push_back(node.span);
    stack.emplace_back(node.right, depth + 1);
    stack.emplace_back(node.left, depth + 1);
  }
  return out;
}

std::vector<int> partners(int word, int distance, int n, Span c, bool inside) {
  std::vector<int> out;
  for (int p : {word - distance, word + distance})
    if (p >= 0 && p < n && c.contains(p) == inside) out.push_back(p);
  return out;
}

void enumerate_triples(std::size_t sentence, int n, const BinaryTree& tree, int max_depth, std::vector<Triple>& out) {
  for (Span c : usable_constituents(tree, max_depth))
    for (int w = c.start; w <= c.end; ++w)
      for (int k = 1; k < n; ++k)
        if (!partners(w, k, n, c, true).empty() && !partners(w, k, n, c, false).empty())
          out.push_back(Triple{sentence, c, w, k});
}

double mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

PerturbArm run_arm(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                   std::span<const BinaryTree> trees, double sigma2, std::uint64_t seed, const std::string& arm,
                   const PerturbOptions& options) {
  std::vector<Triple> triples;
  for (std::size_t s = 0; s < sentences.size(); ++s)
    enumerate_triples(s, static_cast<int>(sentences[s].size()), trees[s], options.max_constituent_depth, triples);
  if (triples.empty()) throw ContractViolation("perturbation_analysis: no valid (word, constituent, distance) triple");
  expect(options.pairs >= 2, "perturbation_analysis: need at least 2 pairs");

  Rng rng = make_rng(seed, "perturb/" + arm);
  const auto d = static_cast<std::size_t>(model.d_model());
  const double sigma = std::sqrt(sigma2);
  PerturbArm out;
  out.valid_triples = triples.size();
  std::vector<Matrix> noise;
  for (std::size_t i = 0; i < options.pairs; ++i) {
    const Triple& t = triples[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(triples.size()) - 1))];
    const int n = static_cast<int>(sentences[t.sentence].size());
    const auto ins = partners(t.word, t.distance, n, t.constituent, true);
    const auto outs = partners(t.word, t.distance, n, t.constituent, false);
    PerturbSample s;
    s.sentence = t.sentence;
    s.constituent = t.constituent;
    s.word = t.word;
    s.distance = t.distance;
    s.inside = ins[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(ins.size()) - 1))];
    s.outside = outs[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(outs.size()) - 1))];
    Matrix eps(1, d);
    for (std::size_t k = 0; k < d; ++k) eps(0, k) = sigma * normal(rng);
    out.samples.push_back(s);
    noise.push_back(std::move(eps));
  }

  auto mask_of = [&](std::size_t s) -> const LayerMask* {
    return options.base_masks.empty() ? nullptr : &options.base_masks[s];
  };
  std::vector<std::optional<EncodeResult>> clean(sentences.size());
  for (const auto& s : out.samples)
    if (!clean[s.sentence]) clean[s.sentence] = model.encode(sentences[s.sentence], mask_of(s.sentence));

  const auto np = static_cast<std::int64_t>(out.samples.size());
  parallel_for(np, true, [&](std::int64_t i) {
    auto& s = out.samples[static_cast<std::size_t>(i)];
    const EncodeResult& base = *clean[s.sentence];
    const auto w = static_cast<std::size_t>(s.word);
    auto delta = [&](int perturbed) {
      Matrix layer0 = base.states[0];
      for (std::size_t k = 0; k < d; ++k) layer0(static_cast<std::size_t>(perturbed), k) += noise[static_cast<std::size_t>(i)](0, k);
      const EncodeResult moved = model.encode_from_embeddings(layer0, mask_of(s.sentence));
      double ss = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = moved.output(w, k) - base.output(w, k);
        ss += diff * diff;
      }
      return std::sqrt(ss);
    };
    s.delta_ic = delta(s.inside);
    s.delta_oc = delta(s.outside);
  });

  std::vector<double> ic, oc;
  for (const auto& s : out.samples) {
    ic.push_back(s.delta_ic);
    oc.push_back(s.delta_oc);
  }
  out.delta_ic = mean(ic);
  out.delta_oc = mean(oc);
  const double avg = 0.5 * (out.delta_ic + out.delta_oc);
  out.relative_difference = avg == 0.0 ? 0.0 : (out.delta_ic - out.delta_oc) / avg;
  out.test = welch_ttest(ic, oc, 2);
  return out;
}

}  // namespace

PerturbationReport perturbation_analysis(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                                         std::span<const BinaryTree> trees, double sigma2, std::uint64_t seed,
                                         const PerturbOptions& options) {
  expect(sentences.size() == trees.size(), "perturbation_analysis: one tree per sentence required");
  expect(sigma2 >= 0.0, "perturbation_analysis: sigma2 must be >= 0");
  expect(options.base_masks.empty() || options.base_masks.size() == sentences.size(),
         "perturbation_analysis: one base mask per sentence required");
  for (std::size_t s = 0; s < sentences.size(); ++s)
    expect(trees[s].leaves() == static_cast<int>(sentences[s].size()),
           "perturbation_analysis: tree " + std::to_string(s) + " does not cover its sentence");
  PerturbationReport report;
  report.sigma2 = sigma2;
  report.main = run_arm(model, sentences, trees, sigma2, seed, "main", options);

  Rng tree_rng = make_rng(seed, "perturb/control_trees");
  std::vector<BinaryTree> random_trees;
  for (const auto& s : sentences)
    random_trees.push_back(baseline_tree(static_cast<int>(s.size()), BaselineKind::Random, tree_rng));
  report.control = run_arm(model, sentences, random_trees, sigma2, seed, "control", options);
  return report;
}

void write_perturb_csv(const std::filesystem::path& path, const PerturbationReport& report) {
  std::FILE* f = detail::open_for_write(path);
  std::fprintf(f, "arm,sentence,constituent_start,constituent_end,word,distance,inside,outside,delta_ic,delta_oc\n");
  for (const auto* arm : {&report.main, &report.control}) {
    const char* name = arm == &report.main ? "main" : "control";
    for (const auto& s : arm->samples)
      std::fprintf(f, "%s,%zu,%d,%d,%d,%d,%d,%d,%s,%s\n", name, s.sentence, s.constituent.start, s.constituent.end,
                   s.word, s.distance, s.inside, s.outside, format_double(s.delta_ic).c_str(),
                   format_double(s.delta_oc).c_str());
  }
  std::fclose(f);
}

std::string perturb_summary_json(const PerturbationReport& report) {
  auto arm_json = [](const PerturbArm& a) {
    return nlohmann::ordered_json{{"delta_ic", a.delta_ic},
                                  {"delta_oc", a.delta_oc},
                                  {"relative_difference", a.relative_difference},
                                  {"t_statistic", a.test.t},
                                  {"dof", a.test.dof},
                                  {"p_value", a.test.p_value},
                                  {"pairs", a.samples.size()},
                                  {"valid_triples", a.valid_triples}};
  };
  nlohmann::ordered_json j{{"sigma2", report.sigma2}, {"main", arm_json(report.main)}, {"control", arm_json(report.control)}};
  return j.dump(2) + "\n";
}

}  // namespace treeproj
