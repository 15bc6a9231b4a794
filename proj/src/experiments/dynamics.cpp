#include <cmath>

#include <json.hpp>

#include "batch.hpp"
#include "treeproj/checkpoint.hpp"
#include "treeproj/error.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/parallel.hpp"
#include "treeproj/spanrep.hpp"

namespace treeproj {

ThresholdMode parse_threshold_mode(const std::string& name) {
  if (name == "fixed") return ThresholdMode::Fixed;
  if (name == "parseval-tuned") return ThresholdMode::ParsevalTuned;
  if (name == "score-tuned") return ThresholdMode::ScoreTuned;
  throw ContractViolation("unknown threshold mode '" + name + "' (fixed, parseval-tuned, score-tuned)");
}

const char* threshold_mode_name(ThresholdMode mode) {
  switch (mode) {
    case ThresholdMode::Fixed: return "fixed";
    case ThresholdMode::ParsevalTuned: return "parseval-tuned";
    case ThresholdMode::ScoreTuned: return "score-tuned";
  }
  return "?";
}

CheckpointScores score_checkpoint(const TransformerModel& model, const Vocab& vocab,
                                  std::span<const TransductionExample> sentences, int threshold,
                                  const DynamicsOptions& options) {
  expect(!sentences.empty(), "score_checkpoint: no sentences");
  ChartOptions chart_options;
  chart_options.parallel = options.parallel;
  std::vector<SciChart> charts;
  charts.reserve(sentences.size());
  for (const auto& ex : sentences) charts.push_back(build_sci_chart(model, vocab.encode(ex.source), threshold, chart_options));
  CheckpointScores out;
  out.threshold = threshold;
  out.t_score = t_score(charts, options.samples_per_node, options.seed, options.projection);
  bool all_gold = true;
  for (const auto& ex : sentences) all_gold = all_gold && ex.gold.has_value();
  if (all_gold) {
    std::vector<BinaryTree> pred, gold;
    for (std::size_t i = 0; i < charts.size(); ++i) {
      pred.push_back(project(charts[i], options.projection));
      gold.push_back(*sentences[i].gold);
    }
    out.t_parseval = corpus_parseval(pred, gold, options.parseval).f1;
  }
  return out;
}

namespace {

std::span<const TransductionExample> head(std::span<const TransductionExample> xs, std::size_t limit) {
  return limit == 0 || limit >= xs.size() ? xs : xs.first(limit);
}

DynamicsRecord evaluate_checkpoint(const std::filesystem::path& dir, const Corpus& corpus, const Vocab& vocab,
                                   const DynamicsOptions& options, bool inner_parallel) {
  const Checkpoint ckpt = load_checkpoint(dir);
  const TransformerModel& model = ckpt.model;
  DynamicsOptions opts = options;
  opts.parallel = inner_parallel;
  const auto analysis = head(corpus.train, options.analysis_sentences);

  std::vector<int> candidates;
  if (options.mode == ThresholdMode::Fixed) {
    expect(options.threshold >= 0 && options.threshold <= model.num_layers(),
           "dynamics: fixed threshold must lie in [0, layers]");
    candidates.push_back(options.threshold);
  } else {
    for (int t = 0; t <= model.num_layers(); ++t) candidates.push_back(t);
  }
  CheckpointScores best;
  bool have = false;
  for (int t : candidates) {
    CheckpointScores s = score_checkpoint(model, vocab, analysis, t, opts);
    const double key = options.mode == ThresholdMode::ParsevalTuned ? s.t_parseval.value_or(0.0) : s.t_score;
    const double best_key = options.mode == ThresholdMode::ParsevalTuned ? best.t_parseval.value_or(0.0) : best.t_score;
    // strict improvement only: ties keep the smaller threshold
    if (!have || key > best_key) {
      best = s;
      have = true;
    }
  }

  DynamicsRecord r;
  r.step = ckpt.step;
  r.threshold = best.threshold;
  r.t_score = best.t_score;
  r.t_parseval = best.t_parseval;
  r.iid_acc = exact_match_accuracy(model, vocab, corpus.iid_val, options.eval_limit, inner_parallel);
  r.cg_acc = exact_match_accuracy(model, vocab, corpus.cg_test, options.eval_limit, inner_parallel);
  if (options.probe) {
    ProbeConfig probe = *options.probe;
    probe.parallel = inner_parallel;
    const auto train = probe_examples(model, vocab, corpus.train, options.probe_train);
    const auto held = probe_examples(model, vocab, corpus.iid_val, options.probe_heldout);
    r.p_parseval = train_probe_on_memories(train, held, probe, options.parseval).p_parseval.f1;
  }
  return r;
}

}  // namespace

DynamicsReport dynamics_report(std::span<const std::filesystem::path> checkpoints, const Corpus& corpus,
                               const Vocab& vocab, const DynamicsOptions& options) {
  expect(checkpoints.size() >= 3, "dynamics: at least 3 checkpoints required");
  expect(!corpus.train.empty(), "dynamics: corpus has no train split");
  if (options.mode == ThresholdMode::ParsevalTuned)
    for (const auto& ex : head(corpus.train, options.analysis_sentences))
      if (!ex.gold) throw ContractViolation("dynamics: parseval-tuned threshold needs gold trees on the train split");
  if (options.probe)
    for (const auto& ex : corpus.train)
      if (!ex.gold) throw ContractViolation("dynamics: the probe needs gold trees");

  DynamicsReport report;
  report.records.resize(checkpoints.size());
  // checkpoints in parallel; everything inside runs serially on its thread
  parallel_for(static_cast<std::int64_t>(checkpoints.size()), options.parallel, [&](std::int64_t c) {
    const auto uc = static_cast<std::size_t>(c);
    report.records[uc] = evaluate_checkpoint(checkpoints[uc], corpus, vocab, options, false);
  });

  std::vector<double> steps, ts, tp, pp, iid, cg;
  for (const auto& r : report.records) {
    steps.push_back(static_cast<double>(r.step));
    ts.push_back(r.t_score);
    if (r.t_parseval) tp.push_back(*r.t_parseval);
    if (r.p_parseval) pp.push_back(*r.p_parseval);
    iid.push_back(r.iid_acc);
    cg.push_back(r.cg_acc);
  }
  auto& out = report.correlations;
  out.push_back({"t_score_vs_step", spearman(ts, steps)});
  if (tp.size() == steps.size()) out.push_back({"t_parseval_vs_step", spearman(tp, steps)});
  if (pp.size() == steps.size()) out.push_back({"p_parseval_vs_step", spearman(pp, steps)});
  out.push_back({"cg_vs_t_score", spearman(ts, cg)});
  if (tp.size() == steps.size()) out.push_back({"cg_vs_t_parseval", spearman(tp, cg)});
  out.push_back({"cg_vs_iid", spearman(iid, cg)});
  return report;
}

void write_dynamics_csv(const std::filesystem::path& path, std::span<const DynamicsRecord> records) {
  std::FILE* f = detail::open_for_write(path);
  std::fprintf(f, "step,t_score,t_parseval,p_parseval,iid_acc,cg_acc,threshold\n");
  for (const auto& r : records)
    std::fprintf(f, "%lld,%s,%s,%s,%s,%s,%d\n", static_cast<long long>(r.step), format_double(r.t_score).c_str(),
                 r.t_parseval ? format_double(*r.t_parseval).c_str() : "",
                 r.p_parseval ? format_double(*r.p_parseval).c_str() : "", format_double(r.iid_acc).c_str(),
                 format_double(r.cg_acc).c_str(), r.threshold);
  std::fclose(f);
}

std::string correlations_json(std::span<const Correlation> correlations) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  auto num = [](double x) { return std::isfinite(x) ? nlohmann::ordered_json(x) : nlohmann::ordered_json(nullptr); };
  for (const auto& c : correlations)
    j[c.name] = {{"rho", num(c.result.rho)}, {"p_value", num(c.result.p_value)}, {"defined", c.result.defined}};
  return j.dump(2) + "\n";
}

}  // namespace treeproj
