#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "treeproj/datasets.hpp"
#include "treeproj/experiments.hpp"
#include "treeproj/model.hpp"

namespace treeproj {

// Flat key = value configuration. Every key has a default and a type;
// unknown keys and unparsable values are ContractViolations naming the key
// and where the value came from. Precedence, lowest first: defaults, config
// file, TREEPROJ_SEED, command-line overrides.
class RunConfig {
 public:
  enum class Type { Int, Real, Bool, Text, Seed };

  RunConfig();

  bool has(const std::string& key) const { return entries_.contains(key); }
  void set(const std::string& key, const std::string& value, const std::string& origin = "override");
  // "key = value" lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path);
  // Applies TREEPROJ_SEED when set.
  void apply_environment();

  const std::string& text(const std::string& key) const;
  int integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::uint64_t seed() const;

  // Sorted "key = value" lines.
  std::string dump() const;

 private:
  struct Entry {
    Type type;
    std::string value;
  };
  const Entry& entry(const std::string& key) const;
  std::map<std::string, Entry> entries_;
};

EncoderConfig encoder_config(const RunConfig& config);
TrainConfig train_config(const RunConfig& config);
MiniCorpusConfig corpus_config(const RunConfig& config);
ProbeConfig probe_config(const RunConfig& config);
DynamicsOptions dynamics_options(const RunConfig& config);

// Entry point of the treeproj binary. Exit codes: 0 success, 1 contract
// violation or bad usage, 2 I/O or load failure, 3 training divergence.
int run_cli(int argc, char** argv);

}  // namespace treeproj
