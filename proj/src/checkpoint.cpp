#include "docre/checkpoint.hpp"

#include "docre/common.hpp"
#include "docre/io.hpp"

#include <cstring>
#include <unordered_map>

namespace docre {

// Layout (native little-endian integers and IEEE doubles):
//   "DRCK" | u32 version | u64 model seed | u32 num_relations |
//   str stage | u64 step | str config_json |
//   u32 vocab_count { str token } |
//   u32 tensor_count { str name | u32 rows | u32 cols | doubles }
// where str = u32 byte length + bytes.

namespace {

constexpr char kMagic[4] = {'D', 'R', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

void put_u64(std::string& out, uint64_t v) {
  char buf[8];
  std::memcpy(buf, &v, 8);
  out.append(buf, 8);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, (uint32_t)s.size());
  out.append(s);
}

struct Reader {
  const std::string& data;
  size_t at = 0;
  const std::string path;

  void need(size_t n) const {
    if (at + n > data.size()) {
      throw IoError("checkpoint " + path + ": truncated at byte " +
                    std::to_string(at));
    }
  }
  uint32_t u32() {
    need(4);
    uint32_t v;
    std::memcpy(&v, data.data() + at, 4);
    at += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v;
    std::memcpy(&v, data.data() + at, 8);
    at += 8;
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    need(n);
    std::string s = data.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, Model& model,
                     const CheckpointMeta& meta) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, model.seed());
  put_u32(out, (uint32_t)model.num_relations());
  put_str(out, meta.stage);
  put_u64(out, (uint64_t)meta.step);
  put_str(out, model.config().to_json().dump());

  const Vocab& vocab = model.vocab();
  put_u32(out, (uint32_t)vocab.tokens.size());
  for (const std::string& tok : vocab.tokens) put_str(out, tok);

  std::vector<ag::Tensor*> params = model.parameters();
  put_u32(out, (uint32_t)params.size());
  for (ag::Tensor* t : params) {
    put_str(out, t->name);
    put_u32(out, (uint32_t)t->value.rows());
    put_u32(out, (uint32_t)t->value.cols());
    size_t bytes = sizeof(double) * (size_t)t->value.size();
    size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t->value.data(), bytes);
  }
  write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::string data = read_file_string(path);
  Reader r{data, 0, path};

  r.need(4);
  if (std::memcmp(data.data(), kMagic, 4) != 0) {
    throw IoError("checkpoint " + path + ": bad magic");
  }
  r.at = 4;
  uint32_t version = r.u32();
  if (version != kVersion) {
    throw IoError("checkpoint " + path + ": unsupported version " +
                  std::to_string(version));
  }
  uint64_t seed = r.u64();
  int num_relations = (int)r.u32();
  CheckpointMeta meta;
  meta.stage = r.str();
  meta.step = (long long)r.u64();
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint " + path + ": config: " + e.what());
  }

  uint32_t vocab_count = r.u32();
  std::vector<std::string> tokens;
  tokens.reserve(vocab_count);
  for (uint32_t i = 0; i < vocab_count; i++) tokens.push_back(r.str());

  LoadedCheckpoint out{
      Model(vocab_from_tokens(tokens), num_relations, cfg, seed), meta};

  std::unordered_map<std::string, ag::Tensor*> by_name;
  for (ag::Tensor* t : out.model.parameters()) by_name[t->name] = t;

  uint32_t tensor_count = r.u32();
  if (tensor_count != by_name.size()) {
    throw IoError("checkpoint " + path + ": holds " +
                  std::to_string(tensor_count) + " tensors, model has " +
                  std::to_string(by_name.size()));
  }
  for (uint32_t i = 0; i < tensor_count; i++) {
    std::string name = r.str();
    uint32_t rows = r.u32();
    uint32_t cols = r.u32();
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw IoError("checkpoint " + path + ": unknown tensor '" + name + "'");
    }
    ag::Tensor* t = it->second;
    if ((uint32_t)t->value.rows() != rows ||
        (uint32_t)t->value.cols() != cols) {
      throw IoError("checkpoint " + path + ": tensor '" + name + "' is " +
                    std::to_string(rows) + "x" + std::to_string(cols) +
                    ", model expects " + std::to_string(t->value.rows()) +
                    "x" + std::to_string(t->value.cols()));
    }
    size_t bytes = sizeof(double) * (size_t)rows * cols;
    r.need(bytes);
    std::memcpy(t->value.data(), data.data() + r.at, bytes);
    r.at += bytes;
  }
  if (r.at != data.size()) {
    throw IoError("checkpoint " + path + ": trailing bytes");
  }
  return out;
}

}  // namespace docre
