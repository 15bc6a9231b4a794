#include "treeproj/tree.hpp"

#include <cctype>
#include <sstream>

#include "treeproj/error.hpp"

namespace treeproj {

BinaryTree BinaryTree::leaf(int index) {
  BinaryTree t;
  t.nodes_.push_back(Node{{index, index}, -1, -1});
  return t;
}

int BinaryTree::build(int start, int end, const std::function<int(int, int)>& split) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{start, end}, -1, -1});
  if (start == end) return id;
  const int k = split(start, end);
  expect(start <= k && k < end, "BinaryTree::from_splits: split point outside [i, j)");
  const int l = build(start, k, split);
  const int r = build(k + 1, end, split);
  nodes_[static_cast<std::size_t>(id)].left = l;
  nodes_[static_cast<std::size_t>(id)].right = r;
  return id;
}

BinaryTree BinaryTree::from_splits(int n, const std::function<int(int, int)>& split) {
  expect(n >= 1, "BinaryTree: need at least one leaf");
  BinaryTree t;
  t.nodes_.reserve(static_cast<std::size_t>(2 * n - 1));
  t.build(0, n - 1, split);
  return t;
}

BinaryTree BinaryTree::join(const BinaryTree& left, const BinaryTree& right) {
  expect(!left.empty() && !right.empty(), "BinaryTree::join: empty operand");
  const int nl = left.leaves();
  const int n = nl + right.leaves();
  return from_splits(n, [&](int i, int j) -> int {
    if (i == 0 && j == n - 1) return nl - 1;
    if (j < nl) return left.split_of({i, j});
    return right.split_of({i - nl, j - nl}) + nl;
  });
}

std::vector<Span> BinaryTree::brackets(bool include_root) const {
  std::vector<Span> out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].is_leaf()) continue;
    if (i == 0 && !include_root) continue;
    out.push_back(nodes_[i].span);
  }
  return out;
}

std::vector<Span> BinaryTree::constituents() const {
  std::vector<Span> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.span);
  return out;
}

int BinaryTree::split_of(Span span) const {
  for (const auto& n : nodes_)
    if (n.span == span && !n.is_leaf()) return nodes_[static_cast<std::size_t>(n.left)].span.end;
  return -1;
}

std::string BinaryTree::to_sexpr(std::span<const std::string> tokens) const {
  expect(!empty(), "to_sexpr: empty tree");
  expect(tokens.empty() || static_cast<int>(tokens.size()) == leaves(), "to_sexpr: token count mismatch");
  std::ostringstream out;
  std::function<void(int)> emit = [&](int id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      if (tokens.empty())
        out << 'w' << n.span.start;
      else
        out << tokens[static_cast<std::size_t>(n.span.start)];
      return;
    }
    out << '(';
    emit(n.left);
    out << ' ';
    emit(n.right);
    out << ')';
  };
  emit(0);
  return out.str();
}

bool BinaryTree::operator==(const BinaryTree& other) const {
  if (nodes_.size() != other.nodes_.size()) return false;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& a = nodes_[i];
    const Node& b = other.nodes_[i];
    if (a.span != b.span || a.left != b.left || a.right != b.right) return false;
  }
  return true;
}

namespace {

struct SexprParser {
  const std::string& text;
  std::size_t pos = 0;
  std::vector<std::string> tokens;

  void skip() {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  }

  // Returns the split structure as a nested tree built with join.
  BinaryTree parse() {
    skip();
    expect(pos < text.size(), "s-expression: unexpected end of input");
    if (text[pos] == ')') throw ContractViolation("s-expression: unexpected ')' at offset " + std::to_string(pos));
    if (text[pos] == '(') {
      const std::size_t open = pos++;
      BinaryTree left = parse();
      skip();
      expect(pos < text.size() && text[pos] != ')',
             "s-expression: bracket at offset " + std::to_string(open) + " has fewer than 2 children");
      BinaryTree right = parse();
      skip();
      expect(pos < text.size(), "s-expression: unbalanced, missing ')' for offset " + std::to_string(open));
      expect(text[pos] == ')',
             "s-expression: bracket at offset " + std::to_string(open) + " has more than 2 children");
      ++pos;
      return BinaryTree::join(left, right);
    }
    const std::size_t begin = pos;
    while (pos < text.size() && !std::isspace(static_cast<unsigned char>(text[pos])) && text[pos] != '(' &&
           text[pos] != ')')
      ++pos;
    tokens.emplace_back(text.substr(begin, pos - begin));
    return BinaryTree::leaf(0);
  }
};

}  // namespace

ParsedTree parse_sexpr(const std::string& text) {
  SexprParser parser{text, 0, {}};
  BinaryTree tree = parser.parse();
  parser.skip();
  expect(parser.pos == text.size(), "s-expression: trailing input at offset " + std::to_string(parser.pos));
  return ParsedTree{std::move(tree), std::move(parser.tokens)};
}

}  // namespace treeproj
