#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "treeproj/datasets.hpp"
#include "treeproj/model.hpp"
#include "treeproj/optimizer.hpp"
#include "treeproj/projector.hpp"
#include "treeproj/treeval.hpp"

namespace treeproj {

// ---------------------------------------------------------------- statistics

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
  // False when either series is constant; rho and p are then NaN.
  bool defined = true;
};

// Average ranks for ties; p from the t approximation with n - 2 dof.
SpearmanResult spearman(std::span<const double> xs, std::span<const double> ys);

struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

WelchResult welch_ttest(std::span<const double> a, std::span<const double> b, int sides = 2);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(std::span<const double> xs);

// P(|T| >= |t|) (sides = 2) or P(T >= t) (sides = 1) for Student's t.
double student_t_tail(double t, double dof, int sides);

// ------------------------------------------------------------------ training

struct TrainConfig {
  int steps = 3000;
  int checkpoint_every = 200;
  int batch_size = 32;
  AdamWConfig optimizer{1e-3, 300, 0.9, 0.999, 1e-8, 0.01};
  // On embeddings and residual branches, training tapes only.
  double dropout = 0.1;
  std::uint64_t seed = 0;
  // Examples per split used for exact-match accuracy at each checkpoint; 0 = all.
  std::size_t eval_limit = 0;
  // Accuracies at every checkpoint; dynamics_report recomputes them anyway.
  bool evaluate = true;
  bool parallel = true;
};

struct CheckpointInfo {
  std::int64_t step = 0;
  std::filesystem::path dir;
  double train_loss = 0.0;  // mean token cross-entropy of the last batch
  double train_acc = 0.0;
  double iid_acc = 0.0;
  double cg_acc = 0.0;
};

struct TrainResult {
  std::vector<CheckpointInfo> checkpoints;
  std::vector<double> losses;  // one per optimizer step
};

// run_dir/checkpoints/step_XXXXXX/ for every multiple of checkpoint_every
// (step 0 included) plus the final step, each with its vocab.txt; run_dir/vocab.txt and
// run_dir/reports/train_log.csv. A NaN loss or gradient throws
// DivergenceError after the earlier checkpoints are on disk.
TrainResult train_seq2seq(const EncoderConfig& config, const Corpus& corpus, const Vocab& vocab,
                          const TrainConfig& train, const std::filesystem::path& run_dir);

std::string checkpoint_dir_name(std::int64_t step);
// Checkpoint directories under run_dir/checkpoints sorted by step.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run_dir);

// Greedy decoding compared token-for-token with the target.
double exact_match_accuracy(const TransformerModel& model, const Vocab& vocab,
                            std::span<const TransductionExample> examples, std::size_t limit = 0,
                            bool parallel = true);

struct MlmConfig {
  double mask_fraction = 0.15;
};

// Masked positions per sentence for one batch: round(fraction * total
// positions) drawn without replacement over every position of the batch
// (at least one). Sentences shorter than 2 tokens are never masked.
std::vector<std::vector<int>> mlm_mask_positions(std::span<const std::size_t> lengths, double fraction, Rng& rng);

// Encoder + single-layer MLM head on corpus sources (targets unused).
TrainResult train_mlm(const EncoderConfig& config, const Corpus& corpus, const Vocab& vocab, const TrainConfig& train,
                      const MlmConfig& mlm, const std::filesystem::path& run_dir);

// Mean cross-entropy on masked positions only.
double mlm_loss(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                std::span<const std::vector<int>> masked, int mask_id);

// --------------------------------------------------------------------- probe

struct ProbeConfig {
  int steps = 1000;
  int batch_size = 32;
  int layers = 1;
  int heads = 4;
  int d_ff = 128;
  AdamWConfig optimizer{1e-3, 100, 0.9, 0.999, 1e-8, 0.0};
  std::uint64_t seed = 0;
  bool parallel = true;
};

struct ProbeExample {
  Matrix memory;  // frozen per-token vectors the probe decodes from
  std::vector<std::string> tokens;
  BinaryTree gold;
};

struct ProbeResult {
  Prf p_parseval;
  std::size_t repaired = 0;
  std::vector<BinaryTree> predicted;
  std::vector<double> losses;
};

// Vocabulary: training source tokens plus "(" and ")".
Vocab probe_vocab(std::span<const ProbeExample> train);

// Trains a decoder to emit linearized gold trees of `train` and reports
// PARSEVAL of repaired greedy decodes on `heldout`.
ProbeResult train_probe_on_memories(std::span<const ProbeExample> train, std::span<const ProbeExample> heldout,
                                    const ProbeConfig& config, const ParsevalOptions& parseval = {});

// Memories are the frozen encoder's final-layer outputs.
std::vector<ProbeExample> probe_examples(const TransformerModel& model, const Vocab& vocab,
                                         std::span<const TransductionExample> examples, std::size_t limit = 0);

ProbeResult train_probe(const TransformerModel& model, const Vocab& vocab, std::span<const TransductionExample> train,
                        std::span<const TransductionExample> heldout, const ProbeConfig& config,
                        const ParsevalOptions& parseval = {});

// -------------------------------------------------------------- perturbation

struct PerturbOptions {
  std::size_t pairs = 500;
  // Constituents at most this deep below the root (root children = 1);
  // 0 = any depth. The root itself is never used.
  int max_constituent_depth = 0;
  // Permissions of the analysed function, one per sentence; empty = none.
  std::span<const LayerMask> base_masks;
};

struct PerturbSample {
  std::size_t sentence = 0;
  Span constituent;
  int word = 0;
  int distance = 0;
  int inside = 0;   // perturbed word inside the constituent
  int outside = 0;  // perturbed word outside, same distance from `word`
  double delta_ic = 0.0;
  double delta_oc = 0.0;
};

struct PerturbArm {
  double delta_ic = 0.0;
  double delta_oc = 0.0;
  double relative_difference = 0.0;
  WelchResult test;
  std::size_t valid_triples = 0;
  std::vector<PerturbSample> samples;
};

struct PerturbationReport {
  PerturbArm main;
  PerturbArm control;  // constituents from random trees
  double sigma2 = 0.0;
};

// Noise with variance sigma2 is added to the layer-0 vector of a word inside
// (resp. outside) a constituent at the same distance from a word w in it;
// Delta is the L2 change of w's final contextual vector. Both arms share one
// noise draw per pair. Throws ContractViolation when no valid triple exists.
PerturbationReport perturbation_analysis(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                                         std::span<const BinaryTree> trees, double sigma2, std::uint64_t seed,
                                         const PerturbOptions& options = {});

void write_perturb_csv(const std::filesystem::path& path, const PerturbationReport& report);
std::string perturb_summary_json(const PerturbationReport& report);

// ------------------------------------------------------------ assumption gap

struct GapOptions {
  int threshold = 0;
  std::size_t span_samples = 200;
  int min_length = 2;
  int max_length = 6;
  std::uint64_t seed = 0;
  std::span<const LayerMask> base_masks;
};

struct GapEntry {
  std::string span;     // "tokens@start"
  std::size_t occurrences = 0;
  double gap = 0.0;          // d(v*, v~)
  double control_gap = 0.0;  // d(v^S of an unrelated span, v~)
  double cost_optimal = 0.0;        // sum_S d(v^S_s, v*)
  double cost_context_free = 0.0;   // sum_S d(v^S_s, v~)
  std::vector<double> v_star;
};

struct GapReport {
  std::vector<GapEntry> entries;
  std::size_t single_occurrence_skipped = 0;
};

// Spans are identified by their tokens and start position, so the
// context-free vector (first occurrence) is well defined. v* is the mean of
// the normalized contextual span vectors, the closed-form minimiser of the
// summed cosine distance.
GapReport assumption_gap(const TransformerModel& model, std::span<const std::vector<int>> sentences,
                         const GapOptions& options = {});

// Closed-form minimiser of sum_i d(x_i, v) for cosine d.
std::vector<double> cosine_centroid(std::span<const std::vector<double>> vectors);

void write_gap_csv(const std::filesystem::path& path, const GapReport& report);

// ------------------------------------------------------------------ dynamics

enum class ThresholdMode { Fixed, ParsevalTuned, ScoreTuned };
ThresholdMode parse_threshold_mode(const std::string& name);
const char* threshold_mode_name(ThresholdMode mode);

struct DynamicsOptions {
  ThresholdMode mode = ThresholdMode::Fixed;
  int threshold = 1;
  std::size_t analysis_sentences = 200;  // leading train examples charted
  std::size_t eval_limit = 0;            // per split, for accuracies; 0 = all
  int samples_per_node = 4;
  ProjectionMode projection = ProjectionMode::Greedy;
  ParsevalOptions parseval;
  std::optional<ProbeConfig> probe;      // p_parseval when set
  std::size_t probe_train = 500;
  std::size_t probe_heldout = 200;
  std::uint64_t seed = 0;
  bool parallel = true;
};

struct DynamicsRecord {
  std::int64_t step = 0;
  double t_score = 0.0;
  std::optional<double> t_parseval;
  std::optional<double> p_parseval;
  double iid_acc = 0.0;
  double cg_acc = 0.0;
  int threshold = 0;
};

struct Correlation {
  std::string name;
  SpearmanResult result;
};

struct DynamicsReport {
  std::vector<DynamicsRecord> records;
  std::vector<Correlation> correlations;
};

struct CheckpointScores {
  int threshold = 0;
  double t_score = 0.0;
  std::optional<double> t_parseval;
};

// t_score (and t_parseval when every sentence has a gold tree) at one threshold.
CheckpointScores score_checkpoint(const TransformerModel& model, const Vocab& vocab,
                                  std::span<const TransductionExample> sentences, int threshold,
                                  const DynamicsOptions& options);

DynamicsReport dynamics_report(std::span<const std::filesystem::path> checkpoints, const Corpus& corpus,
                               const Vocab& vocab, const DynamicsOptions& options);

// Columns: step,t_score,t_parseval,p_parseval,iid_acc,cg_acc,threshold.
void write_dynamics_csv(const std::filesystem::path& path, std::span<const DynamicsRecord> records);
std::string correlations_json(std::span<const Correlation> correlations);

// Shortest round-trippable decimal rendering used by every report.
std::string format_double(double value);

}  // namespace treeproj
