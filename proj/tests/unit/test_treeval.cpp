#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "treeproj/error.hpp"
#include "treeproj/treeval.hpp"

using namespace treeproj;

namespace {

std::vector<std::string> words(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("w" + std::to_string(i));
  return out;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("identical trees score 1") {
  for (int n = 1; n <= 8; ++n)
    for (const auto& t : oracle::all_trees(n)) {
      const Prf r = parseval_f1(t, t);
      CHECK(r.precision == 1.0);
      CHECK(r.recall == 1.0);
      CHECK(r.f1 == 1.0);
    }
}

TEST_CASE("left vs right branching at n = 4 is exactly 1/3") {
  const BinaryTree l = baseline_tree(4, BaselineKind::Left, 0);
  const BinaryTree r = baseline_tree(4, BaselineKind::Right, 0);
  CHECK(l.to_sexpr() == "(((w0 w1) w2) w3)");
  CHECK(r.to_sexpr() == "(w0 (w1 (w2 w3)))");
  const Prf p = parseval_f1(l, r);
  CHECK(p.precision == 1.0 / 3.0);
  CHECK(p.recall == 1.0 / 3.0);
  CHECK(p.f1 == 1.0 / 3.0);
  ParsevalOptions no_root;
  no_root.exclude_root = true;
  CHECK(parseval_f1(l, r, no_root).f1 == 0.0);
  CHECK(parseval_f1(l, l, no_root).f1 == 1.0);
}

TEST_CASE("n = 3: uniformly random trees average F1 0.75") {
  const BinaryTree gold = baseline_tree(3, BaselineKind::Left, 0);
  double enumerated = 0.0;
  for (const auto& t : oracle::all_trees(3)) enumerated += parseval_f1(t, gold).f1;
  CHECK(enumerated / 2.0 == 0.75);
  Rng rng(5);
  double sampled = 0.0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) sampled += parseval_f1(baseline_tree(3, BaselineKind::Random, rng), gold).f1;
  CHECK(sampled / draws == doctest::Approx(0.75).epsilon(0.03));
}

TEST_CASE("random baseline reaches every shape at n = 4") {
  Rng rng(6);
  std::map<std::string, int> seen;
  for (int i = 0; i < 2000; ++i) ++seen[baseline_tree(4, BaselineKind::Random, rng).to_sexpr()];
  CHECK(seen.size() == 5);
  CHECK(baseline_tree(1, BaselineKind::Random, rng).leaves() == 1);
  CHECK_THROWS_AS(baseline_tree(0, BaselineKind::Left, rng), ContractViolation);
  CHECK(parse_baseline_kind("right") == BaselineKind::Right);
  CHECK_THROWS_AS(parse_baseline_kind("middle"), ContractViolation);
}

TEST_CASE("corpus PARSEVAL pools counts before dividing") {
  const std::vector<BinaryTree> pred{baseline_tree(4, BaselineKind::Left, 0), baseline_tree(2, BaselineKind::Left, 0)};
  const std::vector<BinaryTree> gold{baseline_tree(4, BaselineKind::Right, 0), baseline_tree(2, BaselineKind::Right, 0)};
  // 1 + 1 matched out of 3 + 1 brackets on each side.
  CHECK(corpus_parseval(pred, gold).f1 == 0.5);
  const std::vector<BinaryTree> short_gold{gold[0]};
  CHECK_THROWS_AS(corpus_parseval(pred, short_gold), ContractViolation);
  CHECK_THROWS_AS(parseval_f1(pred[0], gold[1]), ContractViolation);
}

TEST_CASE("linearize and delinearize round-trip every tree up to n = 8") {
  for (int n = 1; n <= 8; ++n) {
    const auto tokens = words(n);
    for (const auto& t : oracle::all_trees(n)) {
      const auto seq = linearize(t, tokens);
      const Delinearized back = delinearize(seq, n);
      CHECK(back.tree == t);
      CHECK_FALSE(back.repaired);
    }
  }
  const BinaryTree left = baseline_tree(3, BaselineKind::Left, 0);
  CHECK(linearize(left, words(3)) == split("( ( w0 w1 ) w2 )"));
}

TEST_CASE("malformed bracket streams are repaired") {
  SUBCASE("unclosed bracket") {
    const Delinearized d = delinearize(split("( w0 w1"), 2);
    CHECK(d.repaired);
    CHECK(d.tree.leaves() == 2);
  }
  SUBCASE("stray closer") {
    const Delinearized d = delinearize(split("( w0 w1 ) )"), 2);
    CHECK(d.repaired);
    CHECK(d.tree.leaves() == 2);
  }
  SUBCASE("ternary bracket is right-branched") {
    const Delinearized d = delinearize(split("( w0 w1 w2 )"), 3);
    CHECK(d.repaired);
    CHECK(d.tree == baseline_tree(3, BaselineKind::Right, 0));
  }
  SUBCASE("wrong leaf count falls back to right branching") {
    const Delinearized d = delinearize(split("( w0 w1 )"), 4);
    CHECK(d.repaired);
    CHECK(d.tree == baseline_tree(4, BaselineKind::Right, 0));
  }
  SUBCASE("empty stream") {
    const Delinearized d = delinearize({}, 3);
    CHECK(d.repaired);
    CHECK(d.tree.leaves() == 3);
  }
}

TEST_CASE("s-expression parsing") {
  const ParsedTree p = parse_sexpr("((copy A) (B C))");
  CHECK(p.tokens == std::vector<std::string>{"copy", "A", "B", "C"});
  CHECK(p.tree.to_sexpr(p.tokens) == "((copy A) (B C))");
  CHECK(parse_sexpr("solo").tree.leaves() == 1);
  CHECK_THROWS_AS(parse_sexpr("(a b c)"), ContractViolation);
  CHECK_THROWS_AS(parse_sexpr("(a b"), ContractViolation);
  CHECK_THROWS_AS(parse_sexpr(""), ContractViolation);
}
