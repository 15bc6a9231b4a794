#include "treeproj/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "treeproj/error.hpp"

namespace treeproj {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, bool& out) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return out = true, true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return out = false, true;
  return false;
}

template <typename T>
bool parse_number(const std::string& v, T& out) {
  const char* end = v.data() + v.size();
  auto [ptr, ec] = std::from_chars(v.data(), end, out);
  return ec == std::errc() && ptr == end && !v.empty();
}

bool valid(RunConfig::Type type, const std::string& v) {
  switch (type) {
    case RunConfig::Type::Int: {
      long long x;
      return parse_number(v, x);
    }
    case RunConfig::Type::Real: {
      double x;
      return parse_number(v, x);
    }
    case RunConfig::Type::Bool: {
      bool b;
      return parse_bool(v, b);
    }
    case RunConfig::Type::Seed: {
      unsigned long long x;
      return parse_number(v, x);
    }
    case RunConfig::Type::Text: return true;
  }
  return false;
}

}  // namespace

RunConfig::RunConfig() {
  using T = Type;
  const std::pair<const char*, Entry> defaults[] = {
      {"seed", {T::Seed, "0"}},
      // model
      {"enc_layers", {T::Int, "2"}},
      {"dec_layers", {T::Int, "2"}},
      {"heads", {T::Int, "4"}},
      {"d_model", {T::Int, "64"}},
      {"d_ff", {T::Int, "256"}},
      {"max_len", {T::Int, "64"}},
      {"positional", {T::Text, "sinusoidal"}},
      // training
      {"steps", {T::Int, "3000"}},
      {"checkpoint_every", {T::Int, "200"}},
      {"batch_size", {T::Int, "32"}},
      {"lr", {T::Real, "0.001"}},
      {"warmup_steps", {T::Int, "300"}},
      {"weight_decay", {T::Real, "0.01"}},
      {"dropout", {T::Real, "0.1"}},
      {"beta1", {T::Real, "0.9"}},
      {"beta2", {T::Real, "0.999"}},
      {"eval_limit", {T::Int, "0"}},
      {"evaluate", {T::Bool, "true"}},
      {"mask_fraction", {T::Real, "0.15"}},
      // data
      {"train_count", {T::Int, "2000"}},
      {"val_count", {T::Int, "500"}},
      {"cg_count", {T::Int, "500"}},
      {"min_depth", {T::Int, "1"}},
      {"max_depth", {T::Int, "3"}},
      {"alphabet", {T::Int, "20"}},
      {"unseen", {T::Text, "repeat:reverse,interleave_first:shift"}},
      // projection and scoring
      {"threshold", {T::Int, "1"}},
      {"threshold_mode", {T::Text, "fixed"}},
      {"projection", {T::Text, "greedy"}},
      {"samples_per_node", {T::Int, "4"}},
      {"analysis_sentences", {T::Int, "200"}},
      {"exclude_root", {T::Bool, "false"}},
      // probe
      {"probe", {T::Bool, "false"}},
      {"probe_steps", {T::Int, "1000"}},
      {"probe_layers", {T::Int, "1"}},
      {"probe_d_ff", {T::Int, "128"}},
      {"probe_lr", {T::Real, "0.001"}},
      {"probe_warmup_steps", {T::Int, "100"}},
      {"probe_train", {T::Int, "500"}},
      {"probe_heldout", {T::Int, "200"}},
      // perturbation
      {"sigma2", {T::Real, "0.01"}},
      {"pairs", {T::Int, "500"}},
      {"max_constituent_depth", {T::Int, "0"}},
      // assumption gap
      {"gap_spans", {T::Int, "200"}},
      {"gap_min_length", {T::Int, "2"}},
      {"gap_max_length", {T::Int, "6"}},
  };
  for (const auto& [k, e] : defaults) entries_.emplace(k, e);
}

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ContractViolation("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::set(const std::string& key, const std::string& value, const std::string& origin) {
  auto it = entries_.find(key);
  if (it == entries_.end()) throw ContractViolation(origin + ": unknown config key '" + key + "'");
  if (!valid(it->second.type, value))
    throw ContractViolation(origin + ": invalid value '" + value + "' for config key '" + key + "'");
  it->second.value = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractViolation(where + ": expected 'key = value'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where);
  }
}

void RunConfig::apply_environment() {
  if (const char* s = std::getenv("TREEPROJ_SEED"); s && *s) set("seed", s, "TREEPROJ_SEED");
}

const std::string& RunConfig::text(const std::string& key) const { return entry(key).value; }

int RunConfig::integer(const std::string& key) const {
  const Entry& e = entry(key);
  expect(e.type == Type::Int, "config key '" + key + "' is not an integer");
  long long x = 0;
  parse_number(e.value, x);
  return static_cast<int>(x);
}

double RunConfig::real(const std::string& key) const {
  const Entry& e = entry(key);
  expect(e.type == Type::Real, "config key '" + key + "' is not a real number");
  double x = 0;
  parse_number(e.value, x);
  return x;
}

bool RunConfig::flag(const std::string& key) const {
  const Entry& e = entry(key);
  expect(e.type == Type::Bool, "config key '" + key + "' is not a boolean");
  bool b = false;
  parse_bool(e.value, b);
  return b;
}

std::uint64_t RunConfig::seed() const {
  unsigned long long x = 0;
  parse_number(entry("seed").value, x);
  return x;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, e] : entries_) out << k << " = " << e.value << "\n";
  return out.str();
}

namespace {

std::size_t count_of(const RunConfig& c, const std::string& key) {
  const int v = c.integer(key);
  expect(v >= 0, "config key '" + key + "' must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

EncoderConfig encoder_config(const RunConfig& c) {
  EncoderConfig e;
  e.enc_layers = c.integer("enc_layers");
  e.dec_layers = c.integer("dec_layers");
  e.heads = c.integer("heads");
  e.d_model = c.integer("d_model");
  e.d_ff = c.integer("d_ff");
  e.max_len = c.integer("max_len");
  e.positional = c.text("positional");
  return e;
}

TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.steps = c.integer("steps");
  t.checkpoint_every = c.integer("checkpoint_every");
  t.batch_size = c.integer("batch_size");
  t.optimizer.base_lr = c.real("lr");
  t.optimizer.warmup_steps = c.integer("warmup_steps");
  t.optimizer.weight_decay = c.real("weight_decay");
  t.dropout = c.real("dropout");
  t.optimizer.beta1 = c.real("beta1");
  t.optimizer.beta2 = c.real("beta2");
  t.eval_limit = count_of(c, "eval_limit");
  t.evaluate = c.flag("evaluate");
  t.seed = c.seed();
  return t;
}

MiniCorpusConfig corpus_config(const RunConfig& c) {
  MiniCorpusConfig m;
  m.grammar.min_depth = c.integer("min_depth");
  m.grammar.max_depth = c.integer("max_depth");
  m.grammar.alphabet = c.integer("alphabet");
  m.train = count_of(c, "train_count");
  m.iid_val = count_of(c, "val_count");
  m.cg_test = count_of(c, "cg_count");
  m.unseen = parse_op_pairs(c.text("unseen"));
  return m;
}

ProbeConfig probe_config(const RunConfig& c) {
  ProbeConfig p;
  p.steps = c.integer("probe_steps");
  p.batch_size = c.integer("batch_size");
  p.layers = c.integer("probe_layers");
  p.heads = c.integer("heads");
  p.d_ff = c.integer("probe_d_ff");
  p.optimizer.base_lr = c.real("probe_lr");
  p.optimizer.warmup_steps = c.integer("probe_warmup_steps");
  p.optimizer.weight_decay = 0.0;
  p.seed = derive_seed(c.seed(), "probe");
  return p;
}

DynamicsOptions dynamics_options(const RunConfig& c) {
  DynamicsOptions d;
  d.mode = parse_threshold_mode(c.text("threshold_mode"));
  d.threshold = c.integer("threshold");
  d.analysis_sentences = count_of(c, "analysis_sentences");
  d.eval_limit = count_of(c, "eval_limit");
  d.samples_per_node = c.integer("samples_per_node");
  d.projection = parse_projection_mode(c.text("projection"));
  d.parseval.exclude_root = c.flag("exclude_root");
  if (c.flag("probe")) d.probe = probe_config(c);
  d.probe_train = count_of(c, "probe_train");
  d.probe_heldout = count_of(c, "probe_heldout");
  d.seed = derive_seed(c.seed(), "dynamics");
  return d;
}

}  // namespace treeproj
