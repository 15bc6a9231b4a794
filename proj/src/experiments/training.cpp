#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "batch.hpp"
#include "treeproj/checkpoint.hpp"
#include "treeproj/error.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/parallel.hpp"

namespace treeproj {

namespace fs = std::filesystem;

namespace detail {

double batch_gradients(const std::vector<Parameter*>& params, std::span<const std::size_t> batch,
                       const ExampleLoss& loss, double normalizer, std::vector<Matrix>& grads, bool parallel,
                       const DropoutStream& dropout) {
  const auto nb = static_cast<std::int64_t>(batch.size());
  std::vector<std::vector<Matrix>> per_example(batch.size());
  std::vector<double> losses(batch.size(), 0.0);
  parallel_for(nb, parallel, [&](std::int64_t b) {
    const auto ub = static_cast<std::size_t>(b);
    Tape tape;
    if (dropout.rate > 0.0) tape.enable_dropout(dropout.rate, derive_seed(dropout.seed, std::to_string(ub)));
    Var l = loss(tape, batch[ub]);
    losses[ub] = l.value()(0, 0);
    tape.backward(l);
    auto& g = per_example[ub];
    g.reserve(params.size());
    for (const Parameter* p : params) {
      g.emplace_back(p->value.rows(), p->value.cols(), 0.0);
      tape.accumulate_parameter_gradient(*p, g.back());
    }
  });
  grads.assign(params.size(), Matrix());
  for (std::size_t i = 0; i < params.size(); ++i) grads[i] = Matrix(params[i]->value.rows(), params[i]->value.cols(), 0.0);
  double total = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    total += losses[b];
    for (std::size_t i = 0; i < params.size(); ++i) {
      double* dst = grads[i].data();
      const double* src = per_example[b][i].data();
      for (std::size_t k = 0; k < grads[i].size(); ++k) dst[k] += src[k];
    }
  }
  const double inv = 1.0 / normalizer;
  for (auto& g : grads)
    for (std::size_t k = 0; k < g.size(); ++k) g.data()[k] *= inv;
  return total;
}

std::vector<std::size_t> sample_batch(Rng& rng, std::size_t pool, std::size_t size) {
  expect(pool > 0, "sample_batch: empty pool");
  std::vector<std::size_t> out(size);
  for (auto& i : out) i = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(pool) - 1));
  return out;
}

std::FILE* open_for_write(const fs::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

}  // namespace detail

namespace {

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::size_t longest(std::span<const std::vector<int>> seqs) {
  std::size_t m = 0;
  for (const auto& s : seqs) m = std::max(m, s.size());
  return m;
}

std::span<const TransductionExample> head(std::span<const TransductionExample> xs, std::size_t limit) {
  return limit == 0 || limit >= xs.size() ? xs : xs.first(limit);
}

}  // namespace

std::string checkpoint_dir_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld", static_cast<long long>(step));
  return buf;
}

std::vector<fs::path> list_checkpoints(const fs::path& run_dir) {
  const fs::path root = run_dir / "checkpoints";
  if (!fs::is_directory(root)) throw IoError("no checkpoints directory under " + run_dir.string());
  std::vector<std::pair<long long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("step_", 0) != 0) continue;
    found.emplace_back(std::stoll(name.substr(5)), entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [step, path] : found) out.push_back(std::move(path));
  return out;
}

double exact_match_accuracy(const TransformerModel& model, const Vocab& vocab,
                            std::span<const TransductionExample> examples, std::size_t limit, bool parallel) {
  const auto use = head(examples, limit);
  if (use.empty()) return 0.0;
  const int max_steps = model.config().max_len - 1;
  std::vector<char> correct(use.size(), 0);
  parallel_for(static_cast<std::int64_t>(use.size()), parallel, [&](std::int64_t i) {
    const auto& ex = use[static_cast<std::size_t>(i)];
    const auto src = vocab.encode(ex.source);
    const auto out = model.greedy_decode(src, Vocab::kBos, Vocab::kEos, max_steps);
    correct[static_cast<std::size_t>(i)] = out == vocab.encode(ex.target) ? 1 : 0;
  });
  return static_cast<double>(std::count(correct.begin(), correct.end(), 1)) / static_cast<double>(use.size());
}

TrainResult train_seq2seq(const EncoderConfig& config, const Corpus& corpus, const Vocab& vocab,
                          const TrainConfig& train, const fs::path& run_dir) {
  expect(!corpus.train.empty(), "train_seq2seq: corpus has no train split");
  expect(train.steps >= 0 && train.checkpoint_every > 0 && train.batch_size > 0,
         "train_seq2seq: steps >= 0, checkpoint_every > 0 and batch_size > 0 required");
  expect(train.dropout >= 0.0 && train.dropout < 1.0, "train_seq2seq: dropout must lie in [0, 1)");
  make_dirs(run_dir / "checkpoints");
  make_dirs(run_dir / "reports");
  vocab.save(run_dir / "vocab.txt");

  std::vector<std::vector<int>> sources, targets;
  for (const auto& ex : corpus.train) {
    sources.push_back(vocab.encode(ex.source));
    targets.push_back(vocab.encode_target(ex.target));
  }
  EncoderConfig cfg = config;
  cfg.vocab_size = vocab.size();
  expect(cfg.dec_layers > 0, "train_seq2seq: dec_layers must be > 0");
  expect(static_cast<std::size_t>(cfg.max_len) >= std::max(longest(sources), longest(targets)),
         "train_seq2seq: max_len is shorter than the longest training sequence");

  Rng init = make_rng(train.seed, "init");
  TransformerModel model(cfg, &init);
  std::vector<Parameter*> params = model.parameters();
  AdamW optimizer(train.optimizer, params);
  Rng batch_rng = make_rng(train.seed, "batches");

  TrainResult result;
  std::FILE* log = detail::open_for_write(run_dir / "reports" / "train_log.csv");
  std::fprintf(log, "step,loss,lr\n");
  double last_loss = std::nan("");

  auto checkpoint = [&](std::int64_t step) {
    CheckpointInfo info;
    info.step = step;
    info.dir = run_dir / "checkpoints" / checkpoint_dir_name(step);
    save_checkpoint(model, step, "seq2seq", info.dir);
    vocab.save(info.dir / "vocab.txt");
    info.train_loss = last_loss;
    if (train.evaluate) {
      info.train_acc = exact_match_accuracy(model, vocab, corpus.train, train.eval_limit, train.parallel);
      info.iid_acc = exact_match_accuracy(model, vocab, corpus.iid_val, train.eval_limit, train.parallel);
      info.cg_acc = exact_match_accuracy(model, vocab, corpus.cg_test, train.eval_limit, train.parallel);
    }
    result.checkpoints.push_back(info);
  };

  try {
    checkpoint(0);
    std::vector<Matrix> grads;
    for (int step = 1; step <= train.steps; ++step) {
      const auto batch = detail::sample_batch(batch_rng, sources.size(), static_cast<std::size_t>(train.batch_size));
      double tokens = 0.0;
      for (std::size_t i : batch) tokens += static_cast<double>(targets[i].size() - 1);
      const double lr = optimizer.current_lr();
      const double total = detail::batch_gradients(
          params, batch,
          [&](Tape& tape, std::size_t i) { return model.seq2seq_example_loss(tape, sources[i], targets[i]); },
          tokens, grads, train.parallel, {train.dropout, derive_seed(train.seed, "dropout/" + std::to_string(step))});
      last_loss = total / tokens;
      if (!std::isfinite(last_loss))
        throw DivergenceError("seq2seq loss is not finite at step " + std::to_string(step));
      optimizer.step(grads);
      result.losses.push_back(last_loss);
      std::fprintf(log, "%d,%s,%s\n", step, format_double(last_loss).c_str(), format_double(lr).c_str());
      if (step % train.checkpoint_every == 0 || step == train.steps) checkpoint(step);
    }
  } catch (...) {
    std::fclose(log);
    throw;
  }
  std::fclose(log);

  std::FILE* summary = detail::open_for_write(run_dir / "reports" / "checkpoints.csv");
  std::fprintf(summary, "step,train_loss,train_acc,iid_acc,cg_acc\n");
  for (const auto& c : result.checkpoints)
    std::fprintf(summary, "%lld,%s,%s,%s,%s\n", static_cast<long long>(c.step), format_double(c.train_loss).c_str(),
                 format_double(c.train_acc).c_str(), format_double(c.iid_acc).c_str(),
                 format_double(c.cg_acc).c_str());
  std::fclose(summary);
  return result;
}

// ----------------------------------------------------------------------- MLM

std::vector<std::vector<int>> mlm_mask_positions(std::span<const std::size_t> lengths, double fraction, Rng& rng) {
  expect(fraction > 0.0 && fraction <= 1.0, "mlm_mask_positions: fraction must lie in (0, 1]");
  std::vector<std::pair<std::size_t, int>> slots;
  for (std::size_t s = 0; s < lengths.size(); ++s)
    if (lengths[s] >= 2)
      for (std::size_t p = 0; p < lengths[s]; ++p) slots.emplace_back(s, static_cast<int>(p));
  std::vector<std::vector<int>> out(lengths.size());
  if (slots.empty()) return out;
  const auto k = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(slots.size()))));
  // partial Fisher-Yates: the first k slots are a uniform k-subset
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<std::int64_t>(i),
                                                        static_cast<std::int64_t>(slots.size()) - 1));
    std::swap(slots[i], slots[j]);
  }
  for (std::size_t i = 0; i < k; ++i) out[slots[i].first].push_back(slots[i].second);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

namespace {

Var mlm_example_loss(const TransformerModel& model, Tape& tape, const std::vector<int>& sentence,
                     const std::vector<int>& masked, int mask_id) {
  std::vector<int> input = sentence;
  std::vector<int> labels(sentence.size(), -1);
  for (int p : masked) {
    input[static_cast<std::size_t>(p)] = mask_id;
    labels[static_cast<std::size_t>(p)] = sentence[static_cast<std::size_t>(p)];
  }
  Var out = model.encode_on_tape(tape, input);
  return ad::cross_entropy(model.mlm_logits(tape, out), labels);
}

}  // namespace

double mlm_loss(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                std::span<const std::vector<int>> masked, int mask_id) {
  expect(sentences.size() == masked.size(), "mlm_loss: one mask list per sentence required");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (masked[i].empty()) continue;
    Tape tape(false);
    total += mlm_example_loss(model, tape, sentences[i], masked[i], mask_id).value()(0, 0);
    count += masked[i].size();
  }
  expect(count > 0, "mlm_loss: no masked positions");
  return total / static_cast<double>(count);
}

TrainResult train_mlm(const EncoderConfig& config, const Corpus& corpus, const Vocab& vocab, const TrainConfig& train,
                      const MlmConfig& mlm, const fs::path& run_dir) {
  std::vector<std::vector<int>> sentences;
  for (const auto& ex : corpus.train)
    if (ex.source.size() >= 2) sentences.push_back(vocab.encode(ex.source));
  expect(!sentences.empty(), "train_mlm: no training sentence has 2 or more tokens");
  expect(train.steps >= 0 && train.checkpoint_every > 0 && train.batch_size > 0,
         "train_mlm: steps >= 0, checkpoint_every > 0 and batch_size > 0 required");
  expect(train.dropout >= 0.0 && train.dropout < 1.0, "train_mlm: dropout must lie in [0, 1)");
  make_dirs(run_dir / "checkpoints");
  make_dirs(run_dir / "reports");
  vocab.save(run_dir / "vocab.txt");

  EncoderConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.dec_layers = 0;
  cfg.mlm_head = true;
  expect(static_cast<std::size_t>(cfg.max_len) >= longest(sentences),
         "train_mlm: max_len is shorter than the longest training sentence");
  Rng init = make_rng(train.seed, "init");
  TransformerModel model(cfg, &init);
  std::vector<Parameter*> params = model.parameters();
  AdamW optimizer(train.optimizer, params);
  Rng batch_rng = make_rng(train.seed, "batches");
  Rng mask_rng = make_rng(train.seed, "mlm_mask");

  TrainResult result;
  std::FILE* log = detail::open_for_write(run_dir / "reports" / "train_log.csv");
  std::fprintf(log, "step,loss,lr\n");
  double last_loss = std::nan("");
  auto checkpoint = [&](std::int64_t step) {
    CheckpointInfo info;
    info.step = step;
    info.dir = run_dir / "checkpoints" / checkpoint_dir_name(step);
    info.train_loss = last_loss;
    save_checkpoint(model, step, "mlm", info.dir);
    vocab.save(info.dir / "vocab.txt");
    result.checkpoints.push_back(info);
  };
  try {
    checkpoint(0);
    std::vector<Matrix> grads;
    for (int step = 1; step <= train.steps; ++step) {
      const auto batch = detail::sample_batch(batch_rng, sentences.size(), static_cast<std::size_t>(train.batch_size));
      std::vector<std::size_t> lengths;
      for (std::size_t i : batch) lengths.push_back(sentences[i].size());
      const auto masks = mlm_mask_positions(lengths, mlm.mask_fraction, mask_rng);
      double count = 0.0;
      for (const auto& m : masks) count += static_cast<double>(m.size());
      std::vector<std::size_t> slots(batch.size());
      std::iota(slots.begin(), slots.end(), 0);
      const double lr = optimizer.current_lr();
      const double total = detail::batch_gradients(
          params, slots,
          [&](Tape& tape, std::size_t b) {
            return mlm_example_loss(model, tape, sentences[batch[b]], masks[b], Vocab::kMask);
          },
          count, grads, train.parallel, {train.dropout, derive_seed(train.seed, "dropout/" + std::to_string(step))});
      last_loss = total / count;
      if (!std::isfinite(last_loss)) throw DivergenceError("mlm loss is not finite at step " + std::to_string(step));
      optimizer.step(grads);
      result.losses.push_back(last_loss);
      std::fprintf(log, "%d,%s,%s\n", step, format_double(last_loss).c_str(), format_double(lr).c_str());
      if (step % train.checkpoint_every == 0 || step == train.steps) checkpoint(step);
    }
  } catch (...) {
    std::fclose(log);
    throw;
  }
  std::fclose(log);
  return result;
}

}  // namespace treeproj
