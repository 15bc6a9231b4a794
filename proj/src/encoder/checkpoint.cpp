#include "treeproj/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "treeproj/error.hpp"

namespace treeproj {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_json(const EncoderConfig& c) {
  return json{{"enc_layers", c.enc_layers}, {"dec_layers", c.dec_layers}, {"heads", c.heads},
              {"d_model", c.d_model},       {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
              {"max_len", c.max_len},       {"positional", c.positional}, {"mlm_head", c.mlm_head}};
}

EncoderConfig config_of(const json& j) {
  EncoderConfig c;
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.d_ff = j.at("d_ff").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.positional = j.at("positional").get<std::string>();
  c.mlm_head = j.value("mlm_head", false);
  return c;
}

void write_le(std::ofstream& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string config_to_json(const EncoderConfig& config) { return config_json(config).dump(); }

EncoderConfig config_from_json(const std::string& text) {
  try {
    return config_of(json::parse(text));
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed config: ") + e.what());
  }
}

void save_checkpoint(const TransformerModel& model, std::int64_t step, const std::string& task, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
  json manifest;
  manifest["format"] = "treeproj-checkpoint-v1";
  manifest["config"] = config_json(model.config());
  manifest["step"] = step;
  manifest["task"] = task;
  json tensors = json::array();
  for (const Parameter* p : model.parameters())
    tensors.push_back(json{{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
  manifest["tensors"] = tensors;

  std::ofstream data(dir / "data.bin", std::ios::binary | std::ios::trunc);
  if (!data) throw IoError("cannot write " + (dir / "data.bin").string());
  for (const Parameter* p : model.parameters())
    for (double v : p->value.values()) write_le(data, v);
  data.close();
  if (!data) throw IoError("write failed for " + (dir / "data.bin").string());

  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw IoError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
  if (!mf) throw IoError("write failed for " + (dir / "manifest.json").string());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw LoadError("cannot open " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw LoadError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }

  EncoderConfig config;
  std::int64_t step = 0;
  std::string task;
  try {
    config = config_of(manifest.at("config"));
    step = manifest.at("step").get<std::int64_t>();
    task = manifest.at("task").get<std::string>();
  } catch (const json::exception& e) {
    throw LoadError("manifest " + manifest_path.string() + " missing fields: " + e.what());
  }
  try {
    config.validate();
  } catch (const ContractViolation& e) {
    throw LoadError(std::string("manifest config invalid: ") + e.what());
  }
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array())
    throw LoadError("manifest " + manifest_path.string() + " has no tensor list");

  TransformerModel model(config, nullptr);

  struct Entry {
    Parameter* param;
    std::size_t count;
  };
  std::vector<Entry> entries;
  std::unordered_set<std::string> seen;
  std::size_t total = 0;
  for (const json& t : manifest["tensors"]) {
    std::string name;
    std::size_t rows = 0, cols = 0;
    try {
      name = t.at("name").get<std::string>();
      rows = t.at("rows").get<std::size_t>();
      cols = t.at("cols").get<std::size_t>();
    } catch (const json::exception& e) {
      throw LoadError(std::string("malformed tensor entry: ") + e.what());
    }
    Parameter* p = model.find_parameter(name);
    if (p == nullptr) throw LoadError("unknown tensor '" + name + "' in manifest");
    if (!seen.insert(name).second) throw LoadError("tensor '" + name + "' listed twice");
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw LoadError("shape mismatch for tensor '" + name + "': manifest " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", config implies " + std::to_string(p->value.rows()) + "x" +
                      std::to_string(p->value.cols()));
    entries.push_back({p, rows * cols});
    total += rows * cols;
  }
  for (const Parameter* p : model.parameters())
    if (!seen.contains(p->name)) throw LoadError("tensor '" + p->name + "' missing from manifest");

  const fs::path data_path = dir / "data.bin";
  std::ifstream data(data_path, std::ios::binary);
  if (!data) throw LoadError("cannot open " + data_path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(data)), std::istreambuf_iterator<char>());
  if (bytes.size() != total * 8)
    throw LoadError("data.bin holds " + std::to_string(bytes.size()) + " bytes, manifest requires " +
                    std::to_string(total * 8));
  std::size_t offset = 0;
  for (const Entry& e : entries) {
    double* dst = e.param->value.data();
    for (std::size_t i = 0; i < e.count; ++i, offset += 8) dst[i] = read_le(bytes.data() + offset);
  }
  return Checkpoint{std::move(model), step, std::move(task)};
}

}  // namespace treeproj
