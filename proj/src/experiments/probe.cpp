#include <algorithm>
#include <cmath>
#include <numeric>

#include "batch.hpp"
#include "treeproj/error.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/parallel.hpp"

namespace treeproj {

Vocab probe_vocab(std::span<const ProbeExample> train) {
  Vocab v;
  v.add("(");
  v.add(")");
  for (const auto& ex : train)
    for (const auto& t : ex.tokens) v.add(t);
  return v;
}

ProbeResult train_probe_on_memories(std::span<const ProbeExample> train, std::span<const ProbeExample> heldout,
                                    const ProbeConfig& config, const ParsevalOptions& parseval) {
  expect(!train.empty(), "train_probe: no training examples");
  expect(config.steps >= 0 && config.batch_size > 0, "train_probe: steps >= 0 and batch_size > 0 required");
  const Vocab vocab = probe_vocab(train);
  std::vector<std::vector<int>> targets;
  std::size_t longest = 0;
  for (const auto& ex : train) {
    expect(ex.gold.leaves() == static_cast<int>(ex.tokens.size()), "train_probe: gold tree does not cover the tokens");
    expect(ex.memory.rows() == ex.tokens.size(), "train_probe: one memory row per token required");
    targets.push_back(vocab.encode_target(linearize(ex.gold, ex.tokens)));
    longest = std::max(longest, targets.back().size());
  }
  for (const auto& ex : heldout) longest = std::max(longest, 3 * ex.tokens.size() + 2);

  const auto d_model = static_cast<int>(train.front().memory.cols());
  expect(d_model % config.heads == 0, "train_probe: heads must divide the memory width");
  Decoder::Shape shape{config.layers, config.heads, d_model, config.d_ff, vocab.size(), static_cast<int>(longest) + 1};
  Rng init = make_rng(config.seed, "probe_init");
  Decoder probe(shape, "probe", &init);
  std::vector<Parameter*> params;
  probe.collect(params);
  AdamW optimizer(config.optimizer, params);
  Rng batch_rng = make_rng(config.seed, "probe_batches");

  ProbeResult result;
  std::vector<Matrix> grads;
  for (int step = 1; step <= config.steps; ++step) {
    const auto batch = detail::sample_batch(batch_rng, train.size(), static_cast<std::size_t>(config.batch_size));
    double tokens = 0.0;
    for (std::size_t i : batch) tokens += static_cast<double>(targets[i].size() - 1);
    const double total = detail::batch_gradients(
        params, batch,
        [&](Tape& tape, std::size_t i) {
          const auto& tgt = targets[i];
          const std::span<const int> inputs(tgt.data(), tgt.size() - 1);
          const std::span<const int> next(tgt.data() + 1, tgt.size() - 1);
          Var lg = probe.logits(tape, tape.constant(train[i].memory), inputs);
          return ad::cross_entropy(lg, next);
        },
        tokens, grads, config.parallel);
    const double loss = total / tokens;
    if (!std::isfinite(loss)) throw DivergenceError("probe loss is not finite at step " + std::to_string(step));
    optimizer.step(grads);
    result.losses.push_back(loss);
  }

  result.predicted.resize(heldout.size());
  std::vector<char> repaired(heldout.size(), 0);
  const auto nh = static_cast<std::int64_t>(heldout.size());
  parallel_for(nh, config.parallel, [&](std::int64_t h) {
    const auto& ex = heldout[static_cast<std::size_t>(h)];
    const int n = static_cast<int>(ex.tokens.size());
    const auto ids = probe.greedy(ex.memory, Vocab::kBos, Vocab::kEos, 3 * n + 2);
    const auto seq = vocab.decode(ids);
    Delinearized d = delinearize(seq, n);
    result.predicted[static_cast<std::size_t>(h)] = std::move(d.tree);
    repaired[static_cast<std::size_t>(h)] = d.repaired ? 1 : 0;
  });
  result.repaired = static_cast<std::size_t>(std::count(repaired.begin(), repaired.end(), 1));
  std::vector<BinaryTree> golds;
  for (const auto& ex : heldout) golds.push_back(ex.gold);
  if (!heldout.empty()) result.p_parseval = corpus_parseval(result.predicted, golds, parseval);
  return result;
}

std::vector<ProbeExample> probe_examples(const TransformerModel& model, const Vocab& vocab,
                                         std::span<const TransductionExample> examples, std::size_t limit) {
  std::vector<ProbeExample> out;
  for (const auto& ex : examples) {
    if (limit != 0 && out.size() >= limit) break;
    expect(ex.gold.has_value(), "probe: every example needs a gold tree");
    out.push_back(ProbeExample{model.encode(vocab.encode(ex.source)).output, ex.source, *ex.gold});
  }
  return out;
}

ProbeResult train_probe(const TransformerModel& model, const Vocab& vocab, std::span<const TransductionExample> train,
                        std::span<const TransductionExample> heldout, const ProbeConfig& config,
                        const ParsevalOptions& parseval) {
  const auto tr = probe_examples(model, vocab, train);
  const auto ho = probe_examples(model, vocab, heldout);
  return train_probe_on_memories(tr, ho, config, parseval);
}

}  // namespace treeproj
