#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "treeproj/checkpoint.hpp"
#include "treeproj/error.hpp"
#include "treeproj/run_config.hpp"
#include "treeproj/spanrep.hpp"

namespace treeproj {

namespace fs = std::filesystem;

namespace {

struct Invocation {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> overrides;
  std::string run_dir;
  std::string data_dir;
  std::string checkpoint;
  std::string input;
  std::string pred;
  std::string gold;
  std::string out;
};

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void write_resolved(const fs::path& dir, const std::string& command, const RunConfig& config,
                    const Invocation& inv) {
  make_dirs(dir);
  std::string text = "# treeproj " + command + "\n";
  auto path_line = [&](const char* name, const std::string& v) {
    if (!v.empty()) text += "# " + std::string(name) + " = " + v + "\n";
  };
  path_line("run_dir", inv.run_dir);
  path_line("data", inv.data_dir);
  path_line("checkpoint", inv.checkpoint);
  path_line("input", inv.input);
  text += config.dump();
  write_text(dir / ("resolved_config." + command + ".txt"), text);
}

fs::path reports_dir(const Invocation& inv) {
  const fs::path dir = fs::path(inv.run_dir) / "reports";
  make_dirs(dir);
  return dir;
}

// Checkpoint directories carry their vocabulary.
Vocab checkpoint_vocab(const fs::path& checkpoint) {
  const fs::path own = checkpoint / "vocab.txt";
  if (fs::exists(own)) return Vocab::load(own);
  return Vocab::load(checkpoint.parent_path().parent_path() / "vocab.txt");
}

std::vector<std::vector<int>> encode_all(const Vocab& vocab, std::span<const TransductionExample> examples) {
  std::vector<std::vector<int>> out;
  for (const auto& ex : examples) out.push_back(vocab.encode(ex.source));
  return out;
}

std::span<const TransductionExample> head(std::span<const TransductionExample> xs, std::size_t limit) {
  return limit == 0 || limit >= xs.size() ? xs : xs.first(limit);
}

std::vector<BinaryTree> read_trees(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<BinaryTree> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_sexpr(line).tree);
    } catch (const ContractViolation& e) {
      throw LoadError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// ------------------------------------------------------------- subcommands

void cmd_gen_data(const RunConfig& config, const Invocation& inv) {
  const Corpus corpus = build_mini_corpus(corpus_config(config), derive_seed(config.seed(), "data"));
  write_corpus_dir(inv.out, corpus);
  write_resolved(inv.out, "gen-data", config, inv);
  std::printf("{\"train\": %zu, \"iid_val\": %zu, \"cg_test\": %zu}\n", corpus.train.size(), corpus.iid_val.size(),
              corpus.cg_test.size());
}

void cmd_train(const RunConfig& config, const Invocation& inv, bool mlm) {
  const Corpus corpus = load_corpus_dir(inv.data_dir);
  make_dirs(inv.run_dir);
  write_resolved(inv.run_dir, mlm ? "train-mlm" : "train", config, inv);
  write_corpus_dir(fs::path(inv.run_dir) / "data", corpus);
  const Vocab vocab = Vocab::build(corpus.train);
  TrainConfig train = train_config(config);
  train.seed = derive_seed(config.seed(), "train");
  const TrainResult result = mlm ? train_mlm(encoder_config(config), corpus, vocab, train,
                                             MlmConfig{config.real("mask_fraction")}, inv.run_dir)
                                 : train_seq2seq(encoder_config(config), corpus, vocab, train, inv.run_dir);
  const auto& last = result.checkpoints.back();
  std::printf("{\"checkpoints\": %zu, \"final_step\": %lld, \"final_loss\": %s, \"iid_acc\": %s, \"cg_acc\": %s}\n",
              result.checkpoints.size(), static_cast<long long>(last.step), format_double(last.train_loss).c_str(),
              format_double(last.iid_acc).c_str(), format_double(last.cg_acc).c_str());
}

std::vector<SciChart> charts_for(const Checkpoint& ckpt, const Vocab& vocab,
                                 std::span<const TransductionExample> sentences, int threshold,
                                 const std::string& tag) {
  std::vector<SciChart> charts;
  for (const auto& ex : sentences) {
    SciChart c = build_sci_chart(ckpt.model, vocab.encode(ex.source), threshold);
    c.checkpoint = tag;
    c.sentence = join_tokens(ex.source);
    charts.push_back(std::move(c));
  }
  return charts;
}

void cmd_chart(const RunConfig& config, const Invocation& inv) {
  const Checkpoint ckpt = load_checkpoint(inv.checkpoint);
  const Vocab vocab = checkpoint_vocab(inv.checkpoint);
  const auto sentences = load_sentences(inv.input);
  write_resolved(inv.run_dir, "chart", config, inv);
  const auto charts = charts_for(ckpt, vocab, sentences, config.integer("threshold"),
                                 fs::path(inv.checkpoint).filename().string());
  std::string text;
  for (const auto& c : charts) text += chart_to_json(c) + "\n";
  write_text(reports_dir(inv) / "charts.jsonl", text);
}

void cmd_project(const RunConfig& config, const Invocation& inv) {
  const Checkpoint ckpt = load_checkpoint(inv.checkpoint);
  const Vocab vocab = checkpoint_vocab(inv.checkpoint);
  const auto sentences = load_sentences(inv.input);
  expect(!sentences.empty(), "project: input has no sentences");
  write_resolved(inv.run_dir, "project", config, inv);
  const int threshold = config.integer("threshold");
  const ProjectionMode mode = parse_projection_mode(config.text("projection"));
  const int samples = config.integer("samples_per_node");
  const std::uint64_t seed = derive_seed(config.seed(), "project");
  const auto charts = charts_for(ckpt, vocab, sentences, threshold, fs::path(inv.checkpoint).filename().string());

  std::string trees;
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  std::vector<BinaryTree> pred, gold;
  for (std::size_t s = 0; s < charts.size(); ++s) {
    const BinaryTree tree = project(charts[s], mode);
    Rng rng = make_rng(seed, "t_score/" + std::to_string(s));
    const ProjectionResult scored = score_tree(charts[s], tree, rng, samples);
    trees += tree.to_sexpr(sentences[s].source) + "\n";
    per.push_back({{"sentence", charts[s].sentence},
                   {"cumulative_sci", scored.cumulative_sci},
                   {"normalized_score", charts[s].n <= 2 ? 0.0 : scored.normalized_score}});
    if (sentences[s].gold) {
      pred.push_back(tree);
      gold.push_back(*sentences[s].gold);
    }
  }
  nlohmann::ordered_json j{{"mode", config.text("projection")},
                           {"threshold", threshold},
                           {"samples_per_node", samples},
                           {"t_score", t_score(charts, samples, seed, mode)}};
  if (!gold.empty() && gold.size() == sentences.size()) {
    ParsevalOptions opts{config.flag("exclude_root")};
    j["t_parseval"] = corpus_parseval(pred, gold, opts).f1;
  }
  j["sentences"] = per;
  const fs::path dir = reports_dir(inv);
  write_text(dir / "trees.sexpr", trees);
  write_text(dir / "scores.json", j.dump(2) + "\n");
}

void cmd_eval_trees(const RunConfig& config, const Invocation& inv) {
  const auto pred = read_trees(inv.pred);
  const auto gold = read_trees(inv.gold);
  expect(pred.size() == gold.size(), "eval-trees: " + std::to_string(pred.size()) + " predicted trees but " +
                                         std::to_string(gold.size()) + " gold trees");
  const Prf prf = corpus_parseval(pred, gold, ParsevalOptions{config.flag("exclude_root")});
  nlohmann::ordered_json j{
      {"precision", prf.precision}, {"recall", prf.recall}, {"f1", prf.f1}, {"sentences", pred.size()}};
  std::cout << j.dump() << "\n";
}

void cmd_probe(const RunConfig& config, const Invocation& inv) {
  const Checkpoint ckpt = load_checkpoint(inv.checkpoint);
  const Vocab vocab = checkpoint_vocab(inv.checkpoint);
  const Corpus corpus = load_corpus_dir(inv.data_dir);
  write_resolved(inv.run_dir, "probe", config, inv);
  const auto train = head(corpus.train, static_cast<std::size_t>(config.integer("probe_train")));
  const auto held = head(corpus.iid_val, static_cast<std::size_t>(config.integer("probe_heldout")));
  const ProbeResult r = train_probe(ckpt.model, vocab, train, held, probe_config(config),
                                    ParsevalOptions{config.flag("exclude_root")});
  nlohmann::ordered_json j{{"step", ckpt.step},
                           {"precision", r.p_parseval.precision},
                           {"recall", r.p_parseval.recall},
                           {"p_parseval", r.p_parseval.f1},
                           {"repaired", r.repaired},
                           {"heldout", held.size()},
                           {"final_loss", r.losses.empty() ? 0.0 : r.losses.back()}};
  std::string trees;
  for (std::size_t i = 0; i < r.predicted.size(); ++i) trees += r.predicted[i].to_sexpr(held[i].source) + "\n";
  const fs::path dir = reports_dir(inv);
  write_text(dir / "probe.json", j.dump(2) + "\n");
  write_text(dir / "probe_trees.sexpr", trees);
}

void cmd_perturb(const RunConfig& config, const Invocation& inv) {
  const Checkpoint ckpt = load_checkpoint(inv.checkpoint);
  const Vocab vocab = checkpoint_vocab(inv.checkpoint);
  const Corpus corpus = load_corpus_dir(inv.data_dir);
  write_resolved(inv.run_dir, "perturb", config, inv);
  const auto use = head(corpus.train, static_cast<std::size_t>(config.integer("analysis_sentences")));
  std::vector<BinaryTree> trees;
  for (const auto& ex : use) {
    if (!ex.gold) throw ContractViolation("perturb: every analysed sentence needs a gold tree");
    trees.push_back(*ex.gold);
  }
  PerturbOptions opts;
  opts.pairs = static_cast<std::size_t>(config.integer("pairs"));
  opts.max_constituent_depth = config.integer("max_constituent_depth");
  const auto report = perturbation_analysis(ckpt.model, encode_all(vocab, use), trees, config.real("sigma2"),
                                            derive_seed(config.seed(), "perturb"), opts);
  const fs::path dir = reports_dir(inv);
  write_perturb_csv(dir / "perturb.csv", report);
  write_text(dir / "perturb.json", perturb_summary_json(report));
}

void cmd_gap(const RunConfig& config, const Invocation& inv) {
  const Checkpoint ckpt = load_checkpoint(inv.checkpoint);
  const Vocab vocab = checkpoint_vocab(inv.checkpoint);
  const Corpus corpus = load_corpus_dir(inv.data_dir);
  write_resolved(inv.run_dir, "gap", config, inv);
  GapOptions opts;
  opts.threshold = config.integer("threshold");
  opts.span_samples = static_cast<std::size_t>(config.integer("gap_spans"));
  opts.min_length = config.integer("gap_min_length");
  opts.max_length = config.integer("gap_max_length");
  opts.seed = derive_seed(config.seed(), "gap");
  const auto use = head(corpus.train, static_cast<std::size_t>(config.integer("analysis_sentences")));
  const GapReport report = assumption_gap(ckpt.model, encode_all(vocab, use), opts);
  const fs::path dir = reports_dir(inv);
  write_gap_csv(dir / "gap.csv", report);
  std::size_t holds = 0;
  for (const auto& e : report.entries) holds += e.cost_optimal <= e.cost_context_free ? 1 : 0;
  nlohmann::ordered_json j{{"spans", report.entries.size()},
                           {"single_occurrence_skipped", report.single_occurrence_skipped},
                           {"optimality_holds", holds}};
  write_text(dir / "gap.json", j.dump(2) + "\n");
}

void cmd_dynamics(const RunConfig& config, const Invocation& inv) {
  const fs::path run = inv.run_dir;
  const Corpus corpus = load_corpus_dir(inv.data_dir.empty() ? run / "data" : fs::path(inv.data_dir));
  const Vocab vocab = Vocab::load(run / "vocab.txt");
  const auto checkpoints = list_checkpoints(run);
  write_resolved(run, "dynamics", config, inv);
  const DynamicsReport report = dynamics_report(checkpoints, corpus, vocab, dynamics_options(config));
  const fs::path dir = reports_dir(inv);
  write_dynamics_csv(dir / "dynamics.csv", report.records);
  write_text(dir / "correlations.json", correlations_json(report.correlations));
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Tree projections of transformer encoders"};
  app.require_subcommand(1);
  Invocation inv;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", inv.config_file, "flat key = value config file")->check(CLI::ExistingFile);
    sub->add_option_function<std::vector<std::string>>(
        "--set",
        [&](const std::vector<std::string>& kvs) {
          for (const auto& kv : kvs) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw CLI::ValidationError("--set", "expected key=value, got '" + kv + "'");
            inv.overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
          }
        },
        "override a config key (key=value), repeatable");
    sub->add_option_function<std::string>(
        "--seed", [&](const std::string& v) { inv.overrides.emplace_back("seed", v); }, "global seed");
  };
  auto key_flag = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(
        flag, [&inv, key](const std::string& v) { inv.overrides.emplace_back(key, v); }, help);
  };

  std::string command;
  std::vector<std::pair<CLI::App*, std::function<void(const RunConfig&)>>> handlers;
  auto add = [&](const std::string& name, const std::string& help, std::function<void(const RunConfig&)> fn) {
    CLI::App* sub = app.add_subcommand(name, help);
    common(sub);
    handlers.emplace_back(sub, std::move(fn));
    return sub;
  };

  auto* gen = add("gen-data", "generate the synthetic list-operation corpus",
                  [&](const RunConfig& c) { cmd_gen_data(c, inv); });
  gen->add_option("--out", inv.out, "output directory")->required();

  auto* train = add("train", "train an encoder-decoder", [&](const RunConfig& c) { cmd_train(c, inv, false); });
  train->add_option("--data", inv.data_dir, "corpus directory")->required();
  train->add_option("--run-dir", inv.run_dir, "run directory")->required();
  key_flag(train, "--steps", "steps", "optimizer steps");

  auto* mlm = add("train-mlm", "train an encoder with a masked-token head",
                  [&](const RunConfig& c) { cmd_train(c, inv, true); });
  mlm->add_option("--data", inv.data_dir, "corpus directory")->required();
  mlm->add_option("--run-dir", inv.run_dir, "run directory")->required();
  key_flag(mlm, "--steps", "steps", "optimizer steps");

  auto* chart = add("chart", "dump SCI charts", [&](const RunConfig& c) { cmd_chart(c, inv); });
  chart->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
  chart->add_option("--input", inv.input, "sentences, one per line (TSV first column)")->required();
  chart->add_option("--run-dir", inv.run_dir, "output run directory")->default_val(".");
  key_flag(chart, "--threshold", "threshold", "threshold layer");

  auto* proj = add("project", "induce trees from SCI charts", [&](const RunConfig& c) { cmd_project(c, inv); });
  proj->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
  proj->add_option("--input", inv.input, "sentences, one per line (TSV first column)")->required();
  proj->add_option("--run-dir", inv.run_dir, "output run directory")->default_val(".");
  key_flag(proj, "--threshold", "threshold", "threshold layer");
  key_flag(proj, "--mode", "projection", "greedy or exact");

  auto* eval = add("eval-trees", "corpus PARSEVAL of predicted against gold trees",
                   [&](const RunConfig& c) { cmd_eval_trees(c, inv); });
  eval->add_option("--pred", inv.pred, "predicted trees, one s-expression per line")->required();
  eval->add_option("--gold", inv.gold, "gold trees, one s-expression per line")->required();
  eval->add_flag_function(
      "--exclude-root", [&](std::int64_t) { inv.overrides.emplace_back("exclude_root", "true"); },
      "do not count the full-sentence bracket");

  auto* probe = add("probe", "train a bracket-sequence probe on a frozen encoder",
                    [&](const RunConfig& c) { cmd_probe(c, inv); });
  probe->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
  probe->add_option("--data", inv.data_dir, "corpus directory with gold trees")->required();
  probe->add_option("--run-dir", inv.run_dir, "output run directory")->default_val(".");
  key_flag(probe, "--steps", "probe_steps", "probe optimizer steps");

  auto* perturb = add("perturb", "in- vs out-of-constituent perturbation study",
                      [&](const RunConfig& c) { cmd_perturb(c, inv); });
  perturb->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
  perturb->add_option("--data", inv.data_dir, "corpus directory with gold trees")->required();
  perturb->add_option("--run-dir", inv.run_dir, "output run directory")->default_val(".");

  auto* gap = add("gap", "distance between optimal and context-free span vectors",
                  [&](const RunConfig& c) { cmd_gap(c, inv); });
  gap->add_option("--checkpoint", inv.checkpoint, "checkpoint directory")->required();
  gap->add_option("--data", inv.data_dir, "corpus directory")->required();
  gap->add_option("--run-dir", inv.run_dir, "output run directory")->default_val(".");
  key_flag(gap, "--threshold", "threshold", "threshold layer");

  auto* dyn = add("dynamics", "tree-structuredness and accuracy across checkpoints",
                  [&](const RunConfig& c) { cmd_dynamics(c, inv); });
  dyn->add_option("--run-dir", inv.run_dir, "finished training run")->required();
  dyn->add_option("--data", inv.data_dir, "corpus directory (default: <run-dir>/data)");
  key_flag(dyn, "--threshold", "threshold", "threshold layer for fixed mode");
  key_flag(dyn, "--threshold-mode", "threshold_mode", "fixed, parseval-tuned or score-tuned");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    RunConfig config;
    if (!inv.config_file.empty()) config.load_file(inv.config_file);
    config.apply_environment();
    for (const auto& [k, v] : inv.overrides) config.set(k, v, "command line");
    for (auto& [sub, fn] : handlers)
      if (sub->parsed()) fn(config);
    return 0;
  } catch (const IoError& e) {
    std::fprintf(stderr, "treeproj: I/O error: %s\n", e.what());
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "treeproj: training diverged: %s\n", e.what());
    return 3;
  } catch (const ContractViolation& e) {
    std::fprintf(stderr, "treeproj: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "treeproj: error: %s\n", e.what());
    return 1;
  }
}

}  // namespace treeproj
