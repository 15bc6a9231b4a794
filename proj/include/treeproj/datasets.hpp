#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treeproj/tree.hpp"

namespace treeproj {

enum class SplitTag { Train, IidVal, CgTest };
const char* split_name(SplitTag tag);

struct TransductionExample {
  std::vector<std::string> source;
  std::vector<std::string> target;
  std::optional<BinaryTree> gold;
  SplitTag split = SplitTag::Train;

  bool operator==(const TransductionExample&) const = default;
};

struct Corpus {
  std::vector<TransductionExample> train;
  std::vector<TransductionExample> iid_val;
  std::vector<TransductionExample> cg_test;
};

// Token <-> id bijection with reserved ids below kFirstFree.
class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kMask = 3;
  static constexpr int kUnk = 4;
  static constexpr int kFirstFree = 5;

  Vocab();

  // From the sources and targets of the training split only.
  static Vocab build(std::span<const TransductionExample> train);

  int add(const std::string& token);
  // kUnk for unknown tokens.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.contains(token); }
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  // BOS + tokens + EOS.
  std::vector<int> encode_target(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  // One token per line, in id order.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// ---- M-PCFGSET-style list-operation expressions

struct MpcfgConfig {
  int min_depth = 1;
  int max_depth = 3;
  int alphabet = 20;
};

inline const std::vector<std::string>& mpcfg_unary_ops() {
  static const std::vector<std::string> ops{"copy", "reverse", "shift", "repeat"};
  return ops;
}
inline const std::vector<std::string>& mpcfg_binary_ops() {
  static const std::vector<std::string> ops{"append", "interleave_first", "interleave_second"};
  return ops;
}

// Nested expression: either a two-symbol list (op empty) or an operation
// applied to one or two argument expressions.
struct MpcfgExpr {
  std::string op;
  std::vector<std::string> list;
  std::vector<MpcfgExpr> args;
};

std::vector<std::string> render_mpcfg(const MpcfgExpr& expr);
std::vector<std::string> evaluate_mpcfg(const MpcfgExpr& expr);
// Parses a comma-free token stream (every literal list has exactly 2 symbols).
MpcfgExpr parse_mpcfg(std::span<const std::string> tokens);
// Gold derivation tree: list (a b), unary (op e), binary ((op e1) e2).
BinaryTree mpcfg_gold_tree(const MpcfgExpr& expr);
// Every (parent op, child op) edge of the derivation.
std::set<std::pair<std::string, std::string>> mpcfg_operation_pairs(const MpcfgExpr& expr);

// `count` examples (split tag Train) drawn deterministically from `seed`.
std::vector<TransductionExample> generate_mpcfg_mini(const MpcfgConfig& config, std::uint64_t seed,
                                                     std::size_t count);

using OpPairSet = std::set<std::pair<std::string, std::string>>;
// "repeat:reverse,append:shift" -> {(repeat, reverse), (append, shift)}.
OpPairSet parse_op_pairs(const std::string& spec);

// Examples whose derivation contains a held-out (parent, child) pair go to
// cg-test; the rest is shuffled and split train_fraction / rest into train
// and iid-val. Throws ContractViolation if train would be empty.
Corpus make_cg_split(std::vector<TransductionExample> examples, const OpPairSet& unseen, std::uint64_t seed,
                     double train_fraction = 0.9);

struct MiniCorpusConfig {
  MpcfgConfig grammar;
  std::size_t train = 2000;
  std::size_t iid_val = 500;
  std::size_t cg_test = 500;
  OpPairSet unseen{{"repeat", "reverse"}, {"interleave_first", "shift"}};
};

// Generates unique-source examples until every split quota is filled.
Corpus build_mini_corpus(const MiniCorpusConfig& config, std::uint64_t seed);

// ---- TSV: source<TAB>target[<TAB>gold s-expression]

std::vector<TransductionExample> load_tsv(const std::filesystem::path& path, SplitTag tag = SplitTag::Train);
void write_tsv(const std::filesystem::path& path, std::span<const TransductionExample> examples);

// First column of every non-empty line, whitespace-tokenized, with the
// optional third-column gold tree; targets may be absent.
std::vector<TransductionExample> load_sentences(const std::filesystem::path& path);

// <dir>/train.tsv (required), iid_val.tsv, cg_test.tsv (optional).
Corpus load_corpus_dir(const std::filesystem::path& dir);
void write_corpus_dir(const std::filesystem::path& dir, const Corpus& corpus);

std::vector<std::string> split_whitespace(const std::string& text);
std::string join_tokens(std::span<const std::string> tokens, const char* sep = " ");

}  // namespace treeproj
