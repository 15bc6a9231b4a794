#include "treeproj/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "treeproj/error.hpp"
#include "treeproj/rng.hpp"

namespace treeproj {

namespace fs = std::filesystem;

const char* split_name(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train: return "train";
    case SplitTag::IidVal: return "iid_val";
    case SplitTag::CgTest: return "cg_test";
  }
  return "?";
}

std::vector<std::string> split_whitespace(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out += sep;
    out += tokens[i];
  }
  return out;
}

// ------------------------------------------------------------------ Vocab

Vocab::Vocab() {
  for (const char* t : {"<pad>", "<bos>", "<eos>", "<mask>", "<unk>"}) {
    index_.emplace(t, static_cast<int>(tokens_.size()));
    tokens_.emplace_back(t);
  }
}

Vocab Vocab::build(std::span<const TransductionExample> train) {
  Vocab v;
  for (const auto& ex : train) {
    for (const auto& t : ex.source) v.add(t);
    for (const auto& t : ex.target) v.add(t);
  }
  return v;
}

int Vocab::add(const std::string& token) {
  if (auto it = index_.find(token); it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  index_.emplace(token, id);
  tokens_.push_back(token);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  expect(id >= 0 && id < size(), "Vocab::token: id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<int> Vocab::encode_target(std::span<const std::string> tokens) const {
  std::vector<int> out{kBos};
  for (const auto& t : tokens) out.push_back(id(t));
  out.push_back(kEos);
  return out;
}

std::vector<std::string> Vocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

void Vocab::save(const fs::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write vocab " + path.string());
  for (const auto& t : tokens_) out << t << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

Vocab Vocab::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  Vocab v;
  if (lines.size() < static_cast<std::size_t>(kFirstFree))
    throw LoadError("vocab " + path.string() + " is missing reserved tokens");
  for (int i = 0; i < kFirstFree; ++i)
    if (lines[static_cast<std::size_t>(i)] != v.tokens_[static_cast<std::size_t>(i)])
      throw LoadError("vocab " + path.string() + ": reserved token mismatch at line " + std::to_string(i + 1));
  for (std::size_t i = static_cast<std::size_t>(kFirstFree); i < lines.size(); ++i) {
    if (v.contains(lines[i])) throw LoadError("vocab " + path.string() + ": duplicate token at line " + std::to_string(i + 1));
    v.add(lines[i]);
  }
  return v;
}

// ------------------------------------------------------------ expressions

namespace {

bool is_unary(const std::string& op) {
  const auto& u = mpcfg_unary_ops();
  return std::find(u.begin(), u.end(), op) != u.end();
}

bool is_binary(const std::string& op) {
  const auto& b = mpcfg_binary_ops();
  return std::find(b.begin(), b.end(), op) != b.end();
}

std::vector<std::string> interleave(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out;
  const std::size_t m = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < m; ++i) {
    if (i < a.size()) out.push_back(a[i]);
    if (i < b.size()) out.push_back(b[i]);
  }
  return out;
}

void render_into(const MpcfgExpr& e, std::vector<std::string>& out) {
  if (e.op.empty()) {
    out.insert(out.end(), e.list.begin(), e.list.end());
    return;
  }
  out.push_back(e.op);
  for (const auto& a : e.args) render_into(a, out);
}

MpcfgExpr parse_at(std::span<const std::string> tokens, std::size_t& pos) {
  expect(pos < tokens.size(), "mpcfg: expression ends early");
  const std::string& head = tokens[pos];
  MpcfgExpr e;
  if (is_unary(head) || is_binary(head)) {
    e.op = head;
    ++pos;
    e.args.push_back(parse_at(tokens, pos));
    if (is_binary(head)) e.args.push_back(parse_at(tokens, pos));
    return e;
  }
  expect(pos + 1 < tokens.size(), "mpcfg: list literal needs two symbols");
  for (int i = 0; i < 2; ++i) {
    expect(!is_unary(tokens[pos]) && !is_binary(tokens[pos]), "mpcfg: operation inside a list literal");
    e.list.push_back(tokens[pos++]);
  }
  return e;
}

void pairs_into(const MpcfgExpr& e, std::set<std::pair<std::string, std::string>>& out) {
  for (const auto& a : e.args) {
    if (!a.op.empty()) out.emplace(e.op, a.op);
    pairs_into(a, out);
  }
}

MpcfgExpr random_expr(int depth, const MpcfgConfig& cfg, Rng& rng) {
  MpcfgExpr e;
  if (depth == 0) {
    for (int i = 0; i < 2; ++i) {
      const auto sym = uniform_int(rng, 0, cfg.alphabet - 1);
      e.list.push_back(std::string(1, static_cast<char>('A' + sym % 26)) + (sym >= 26 ? std::to_string(sym / 26) : ""));
    }
    return e;
  }
  const auto& unary = mpcfg_unary_ops();
  const auto& binary = mpcfg_binary_ops();
  const auto pick = uniform_int(rng, 0, static_cast<std::int64_t>(unary.size() + binary.size()) - 1);
  if (pick < static_cast<std::int64_t>(unary.size())) {
    e.op = unary[static_cast<std::size_t>(pick)];
    e.args.push_back(random_expr(depth - 1, cfg, rng));
  } else {
    e.op = binary[static_cast<std::size_t>(pick) - unary.size()];
    // one argument carries the full remaining depth, the other is shallower or equal
    const int other = static_cast<int>(uniform_int(rng, 0, depth - 1));
    const bool deep_first = uniform_int(rng, 0, 1) == 0;
    MpcfgExpr deep = random_expr(depth - 1, cfg, rng);
    MpcfgExpr shallow = random_expr(other, cfg, rng);
    if (deep_first) {
      e.args.push_back(std::move(deep));
      e.args.push_back(std::move(shallow));
    } else {
      e.args.push_back(std::move(shallow));
      e.args.push_back(std::move(deep));
    }
  }
  return e;
}

}  // namespace

std::vector<std::string> render_mpcfg(const MpcfgExpr& expr) {
  std::vector<std::string> out;
  render_into(expr, out);
  return out;
}

std::vector<std::string> evaluate_mpcfg(const MpcfgExpr& e) {
  if (e.op.empty()) return e.list;
  std::vector<std::string> x = evaluate_mpcfg(e.args.at(0));
  if (e.op == "copy") return x;
  if (e.op == "reverse") {
    std::reverse(x.begin(), x.end());
    return x;
  }
  if (e.op == "shift") {
    if (!x.empty()) std::rotate(x.begin(), x.begin() + 1, x.end());
    return x;
  }
  if (e.op == "repeat") {
    std::vector<std::string> out = x;
    out.insert(out.end(), x.begin(), x.end());
    return out;
  }
  std::vector<std::string> y = evaluate_mpcfg(e.args.at(1));
  if (e.op == "append") {
    x.insert(x.end(), y.begin(), y.end());
    return x;
  }
  if (e.op == "interleave_first") return interleave(x, y);
  if (e.op == "interleave_second") return interleave(y, x);
  throw ContractViolation("mpcfg: unknown operation '" + e.op + "'");
}

MpcfgExpr parse_mpcfg(std::span<const std::string> tokens) {
  std::size_t pos = 0;
  MpcfgExpr e = parse_at(tokens, pos);
  expect(pos == tokens.size(), "mpcfg: trailing tokens after expression");
  return e;
}

BinaryTree mpcfg_gold_tree(const MpcfgExpr& e) {
  if (e.op.empty()) return BinaryTree::join(BinaryTree::leaf(), BinaryTree::leaf());
  BinaryTree head = BinaryTree::join(BinaryTree::leaf(), mpcfg_gold_tree(e.args.at(0)));
  if (e.args.size() == 1) return head;
  return BinaryTree::join(head, mpcfg_gold_tree(e.args.at(1)));
}

std::set<std::pair<std::string, std::string>> mpcfg_operation_pairs(const MpcfgExpr& expr) {
  std::set<std::pair<std::string, std::string>> out;
  pairs_into(expr, out);
  return out;
}

std::vector<TransductionExample> generate_mpcfg_mini(const MpcfgConfig& config, std::uint64_t seed,
                                                     std::size_t count) {
  expect(config.min_depth >= 1 && config.max_depth >= config.min_depth, "mpcfg: need 1 <= min_depth <= max_depth");
  expect(config.alphabet >= 2, "mpcfg: alphabet must have at least 2 symbols");
  Rng rng = make_rng(seed, "mpcfg");
  std::vector<TransductionExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const int depth = static_cast<int>(uniform_int(rng, config.min_depth, config.max_depth));
    const MpcfgExpr e = random_expr(depth, config, rng);
    out.push_back(TransductionExample{render_mpcfg(e), evaluate_mpcfg(e), mpcfg_gold_tree(e), SplitTag::Train});
  }
  return out;
}

OpPairSet parse_op_pairs(const std::string& spec) {
  OpPairSet out;
  std::stringstream in(spec);
  for (std::string item; std::getline(in, item, ',');) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    expect(colon != std::string::npos && colon > 0 && colon + 1 < item.size(),
           "operation pair '" + item + "' must look like parent:child");
    out.emplace(item.substr(0, colon), item.substr(colon + 1));
  }
  return out;
}

Corpus make_cg_split(std::vector<TransductionExample> examples, const OpPairSet& unseen, std::uint64_t seed,
                     double train_fraction) {
  expect(train_fraction > 0.0 && train_fraction <= 1.0, "make_cg_split: train_fraction must lie in (0, 1]");
  Corpus corpus;
  std::vector<TransductionExample> rest;
  for (auto& ex : examples) {
    bool held = false;
    if (!unseen.empty()) {
      const auto pairs = mpcfg_operation_pairs(parse_mpcfg(ex.source));
      for (const auto& p : pairs)
        if (unseen.contains(p)) held = true;
    }
    if (held) {
      ex.split = SplitTag::CgTest;
      corpus.cg_test.push_back(std::move(ex));
    } else {
      rest.push_back(std::move(ex));
    }
  }
  Rng rng = make_rng(seed, "cg_split");
  for (std::size_t i = rest.size(); i > 1; --i)
    std::swap(rest[i - 1], rest[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<std::int64_t>(i) - 1))]);
  const auto n_train = static_cast<std::size_t>(static_cast<double>(rest.size()) * train_fraction + 0.5);
  if (n_train == 0) throw ContractViolation("make_cg_split: holdout rule leaves the train split empty");
  for (std::size_t i = 0; i < rest.size(); ++i) {
    rest[i].split = i < n_train ? SplitTag::Train : SplitTag::IidVal;
    (i < n_train ? corpus.train : corpus.iid_val).push_back(std::move(rest[i]));
  }
  return corpus;
}

Corpus build_mini_corpus(const MiniCorpusConfig& config, std::uint64_t seed) {
  Corpus corpus;
  std::unordered_set<std::string> seen;
  std::vector<TransductionExample> in_domain;
  const std::size_t in_domain_needed = config.train + config.iid_val;
  for (int round = 0; round < 64; ++round) {
    if (in_domain.size() >= in_domain_needed && corpus.cg_test.size() >= config.cg_test) break;
    auto batch = generate_mpcfg_mini(config.grammar, derive_seed(seed, "round/" + std::to_string(round)),
                                     in_domain_needed + config.cg_test);
    for (auto& ex : batch) {
      if (!seen.insert(join_tokens(ex.source)).second) continue;
      bool held = false;
      for (const auto& p : mpcfg_operation_pairs(parse_mpcfg(ex.source)))
        if (config.unseen.contains(p)) held = true;
      if (held) {
        if (corpus.cg_test.size() < config.cg_test) {
          ex.split = SplitTag::CgTest;
          corpus.cg_test.push_back(std::move(ex));
        }
      } else if (in_domain.size() < in_domain_needed) {
        in_domain.push_back(std::move(ex));
      }
    }
  }
  expect(in_domain.size() >= in_domain_needed && corpus.cg_test.size() >= config.cg_test,
         "build_mini_corpus: grammar cannot supply the requested number of unique examples");
  const double fraction = static_cast<double>(config.train) / static_cast<double>(in_domain_needed);
  Corpus split = make_cg_split(std::move(in_domain), {}, seed, fraction);
  corpus.train = std::move(split.train);
  corpus.iid_val = std::move(split.iid_val);
  return corpus;
}

// -------------------------------------------------------------------- TSV

std::vector<TransductionExample> load_tsv(const fs::path& path, SplitTag tag) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TransductionExample> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (line.back() == '\t') cols.emplace_back();
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cols.size() < 2 || cols.size() > 3) throw LoadError(where + ": expected 2 or 3 tab-separated columns");
    TransductionExample ex;
    ex.source = split_whitespace(cols[0]);
    ex.target = split_whitespace(cols[1]);
    ex.split = tag;
    if (ex.source.empty()) throw LoadError(where + ": empty source");
    if (cols.size() == 3) {
      try {
        ParsedTree parsed = parse_sexpr(cols[2]);
        if (parsed.tokens != ex.source) throw ContractViolation("gold tree leaves do not match the source tokens");
        ex.gold = std::move(parsed.tree);
      } catch (const ContractViolation& e) {
        throw LoadError(where + ": bad gold tree: " + e.what());
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

void write_tsv(const fs::path& path, std::span<const TransductionExample> examples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& ex : examples) {
    out << join_tokens(ex.source) << '\t' << join_tokens(ex.target);
    if (ex.gold) out << '\t' << ex.gold->to_sexpr(ex.source);
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<TransductionExample> load_sentences(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<TransductionExample> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cols;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, '\t');) cols.push_back(c);
    if (cols.empty() || split_whitespace(cols[0]).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cols.size() > 3) throw LoadError(where + ": more than 3 tab-separated columns");
    TransductionExample ex;
    ex.source = split_whitespace(cols[0]);
    if (cols.size() >= 2) ex.target = split_whitespace(cols[1]);
    if (cols.size() == 3) {
      try {
        ParsedTree parsed = parse_sexpr(cols[2]);
        if (parsed.tokens != ex.source) throw ContractViolation("gold tree leaves do not match the source tokens");
        ex.gold = std::move(parsed.tree);
      } catch (const ContractViolation& e) {
        throw LoadError(where + ": bad gold tree: " + e.what());
      }
    }
    out.push_back(std::move(ex));
  }
  return out;
}

Corpus load_corpus_dir(const fs::path& dir) {
  Corpus c;
  c.train = load_tsv(dir / "train.tsv", SplitTag::Train);
  if (fs::exists(dir / "iid_val.tsv")) c.iid_val = load_tsv(dir / "iid_val.tsv", SplitTag::IidVal);
  if (fs::exists(dir / "cg_test.tsv")) c.cg_test = load_tsv(dir / "cg_test.tsv", SplitTag::CgTest);
  return c;
}

void write_corpus_dir(const fs::path& dir, const Corpus& corpus) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_tsv(dir / "train.tsv", corpus.train);
  write_tsv(dir / "iid_val.tsv", corpus.iid_val);
  write_tsv(dir / "cg_test.tsv", corpus.cg_test);
}

}  // namespace treeproj
