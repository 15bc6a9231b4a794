#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "oracles.hpp"
#include "treeproj/datasets.hpp"
#include "treeproj/error.hpp"

using namespace treeproj;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("treeproj_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

std::vector<std::string> toks(const std::string& s) { return split_whitespace(s); }

}  // namespace

TEST_CASE("operation semantics on literal lists") {
  auto eval = [](const std::string& s) { return join_tokens(evaluate_mpcfg(parse_mpcfg(toks(s)))); };
  CHECK(eval("copy A B") == "A B");
  CHECK(eval("reverse A B") == "B A");
  CHECK(eval("shift A B") == "B A");
  CHECK(eval("repeat A B") == "A B A B");
  CHECK(eval("append A B C D") == "A B C D");
  CHECK(eval("interleave_first A B C D") == "A C B D");
  CHECK(eval("interleave_second A B C D") == "C A D B");
  CHECK(eval("shift repeat A B") == "B A B A");
  CHECK(eval("append A B reverse C D") == "A B D C");
  CHECK(eval("append reverse A B C D") == "B A C D");
}

TEST_CASE("parser rejects malformed expressions") {
  CHECK_THROWS_AS(parse_mpcfg(toks("copy A")), ContractViolation);
  CHECK_THROWS_AS(parse_mpcfg(toks("append A B")), ContractViolation);
  CHECK_THROWS_AS(parse_mpcfg(toks("copy A B C D")), ContractViolation);
  CHECK_THROWS_AS(parse_mpcfg({}), ContractViolation);
}

TEST_CASE("generated targets agree with an independent stack evaluator") {
  MpcfgConfig cfg;
  cfg.min_depth = 1;
  cfg.max_depth = 4;
  const auto examples = generate_mpcfg_mini(cfg, 2024, 10000);
  REQUIRE(examples.size() == 10000);
  int mismatches = 0;
  for (const auto& ex : examples)
    if (oracle::stack_evaluate(ex.source) != ex.target) ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("generation is deterministic under a seed") {
  const MpcfgConfig cfg;
  CHECK(generate_mpcfg_mini(cfg, 3, 50) == generate_mpcfg_mini(cfg, 3, 50));
  CHECK_FALSE(generate_mpcfg_mini(cfg, 3, 50) == generate_mpcfg_mini(cfg, 4, 50));
}

TEST_CASE("gold trees are binary trees over the source tokens") {
  const auto examples = generate_mpcfg_mini(MpcfgConfig{}, 8, 2000);
  for (const auto& ex : examples) {
    REQUIRE(ex.gold.has_value());
    CHECK(ex.gold->leaves() == static_cast<int>(ex.source.size()));
    CHECK(static_cast<int>(ex.gold->brackets().size()) == ex.gold->leaves() - 1);
    CHECK(ex.gold->to_sexpr(ex.source).find(',') == std::string::npos);
  }
  CHECK(mpcfg_gold_tree(parse_mpcfg(toks("append A B C D"))).to_sexpr(toks("append A B C D")) ==
        "((append (A B)) (C D))");
  CHECK(mpcfg_gold_tree(parse_mpcfg(toks("copy A B"))).to_sexpr(toks("copy A B")) == "(copy (A B))");
}

TEST_CASE("expression depth stays within the configured range") {
  MpcfgConfig cfg;
  cfg.min_depth = 2;
  cfg.max_depth = 2;
  for (const auto& ex : generate_mpcfg_mini(cfg, 1, 500)) {
    const MpcfgExpr e = parse_mpcfg(ex.source);
    REQUIRE_FALSE(e.op.empty());
    bool has_nested_op = false;
    for (const auto& a : e.args) {
      has_nested_op = has_nested_op || !a.op.empty();
      for (const auto& b : a.args) CHECK(b.op.empty());
    }
    CHECK(has_nested_op);
  }
}

TEST_CASE("compositional split holds out every unseen operation edge") {
  MiniCorpusConfig cfg;
  cfg.train = 400;
  cfg.iid_val = 100;
  cfg.cg_test = 100;
  const Corpus c = build_mini_corpus(cfg, 5);
  CHECK(c.train.size() == 400);
  CHECK(c.iid_val.size() == 100);
  CHECK(c.cg_test.size() == 100);
  std::set<std::vector<std::string>> sources;
  auto has_unseen = [&](const TransductionExample& ex) {
    for (const auto& p : mpcfg_operation_pairs(parse_mpcfg(ex.source)))
      if (cfg.unseen.contains(p)) return true;
    return false;
  };
  for (const auto& ex : c.train) {
    CHECK_FALSE(has_unseen(ex));
    CHECK(ex.split == SplitTag::Train);
    sources.insert(ex.source);
  }
  for (const auto& ex : c.iid_val) {
    CHECK_FALSE(has_unseen(ex));
    CHECK(ex.split == SplitTag::IidVal);
    sources.insert(ex.source);
  }
  for (const auto& ex : c.cg_test) {
    CHECK(has_unseen(ex));
    CHECK(ex.split == SplitTag::CgTest);
    sources.insert(ex.source);
  }
  CHECK(sources.size() == 600);

  // Every cg-test token occurs in training, so held-out examples recombine
  // known primitives.
  const Vocab v = Vocab::build(c.train);
  for (const auto& ex : c.cg_test)
    for (const auto& t : ex.source) CHECK(v.contains(t));
}

TEST_CASE("empty unseen set sends nothing to cg-test") {
  const Corpus c = make_cg_split(generate_mpcfg_mini(MpcfgConfig{}, 2, 100), {}, 1, 0.8);
  CHECK(c.cg_test.empty());
  CHECK(c.train.size() == 80);
  CHECK(c.iid_val.size() == 20);
  CHECK_THROWS_AS(make_cg_split({}, {}, 1), ContractViolation);
}

TEST_CASE("operation pair strings") {
  const OpPairSet p = parse_op_pairs("repeat:reverse,append:shift");
  CHECK(p.size() == 2);
  CHECK(p.contains({"append", "shift"}));
  CHECK(parse_op_pairs("").empty());
  CHECK_THROWS_AS(parse_op_pairs("repeat"), ContractViolation);
  CHECK_THROWS_AS(parse_op_pairs(":x"), ContractViolation);
}

TEST_CASE("vocab reserves special ids and round-trips") {
  const auto examples = generate_mpcfg_mini(MpcfgConfig{}, 9, 100);
  const Vocab v = Vocab::build(examples);
  CHECK(v.token(Vocab::kPad) == "<pad>");
  CHECK(v.id("never-seen") == Vocab::kUnk);
  const auto ids = v.encode_target(examples[0].target);
  CHECK(ids.front() == Vocab::kBos);
  CHECK(ids.back() == Vocab::kEos);
  CHECK(v.decode(v.encode(examples[0].source)) == examples[0].source);
  const fs::path dir = scratch("vocab");
  v.save(dir / "vocab.txt");
  const Vocab back = Vocab::load(dir / "vocab.txt");
  CHECK(back.size() == v.size());
  for (int i = 0; i < v.size(); ++i) CHECK(back.token(i) == v.token(i));
  write_text(dir / "dup.txt", "<pad>\n<bos>\n<eos>\n<mask>\n<unk>\nA\nA\n");
  CHECK_THROWS_AS(Vocab::load(dir / "dup.txt"), LoadError);
  write_text(dir / "bad.txt", "A\nB\n");
  CHECK_THROWS_AS(Vocab::load(dir / "bad.txt"), LoadError);
  fs::remove_all(dir);
}

TEST_CASE("TSV round trip and line-numbered errors") {
  const fs::path dir = scratch("tsv");
  const auto examples = generate_mpcfg_mini(MpcfgConfig{}, 10, 30);
  write_tsv(dir / "x.tsv", examples);
  CHECK(load_tsv(dir / "x.tsv") == examples);

  write_text(dir / "two.tsv", "copy A B\tA B\n");
  const auto two = load_tsv(dir / "two.tsv", SplitTag::IidVal);
  REQUIRE(two.size() == 1);
  CHECK_FALSE(two[0].gold.has_value());
  CHECK(two[0].split == SplitTag::IidVal);

  write_text(dir / "bad.tsv", "copy A B\tA B\none column only\n");
  try {
    load_tsv(dir / "bad.tsv");
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
  write_text(dir / "gold.tsv", "copy A B\tA B\t(copy (A C))\n");
  CHECK_THROWS_AS(load_tsv(dir / "gold.tsv"), LoadError);
  write_text(dir / "leaves.tsv", "copy A B\tA B\t(copy A)\n");
  CHECK_THROWS_AS(load_tsv(dir / "leaves.tsv"), LoadError);
  CHECK_THROWS_AS(load_tsv(dir / "missing.tsv"), IoError);

  Corpus c;
  c.train = examples;
  write_corpus_dir(dir / "corpus", c);
  const Corpus back = load_corpus_dir(dir / "corpus");
  CHECK(back.train == examples);
  CHECK(back.cg_test.empty());
  CHECK_THROWS_AS(load_corpus_dir(dir / "nowhere"), IoError);
  fs::remove_all(dir);
}
