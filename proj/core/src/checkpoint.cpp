#include "sla/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "sla/common.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O writes raw little-endian words");

namespace sla {

namespace {

constexpr char kMagic[4] = {'R', 'T', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

void write_u64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

uint32_t read_u32(std::istream& is, const std::string& what) {
  uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError(cat("checkpoint truncated while reading ", what));
  }
  return v;
}

uint64_t read_u64(std::istream& is, const std::string& what) {
  uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw IoError(cat("checkpoint truncated while reading ", what));
  }
  return v;
}

}  // namespace

std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "vocab_size=" << c.vocab_size << "\n"
     << "d_model=" << c.d_model << "\n"
     << "n_layers=" << c.n_layers << "\n"
     << "n_heads=" << c.n_heads << "\n"
     << "d_ffn=" << c.d_ffn << "\n"
     << "d_reward=" << c.d_reward << "\n"
     << "max_seq_len=" << c.max_seq_len << "\n";
  return os.str();
}

ModelConfig parse_config_text(const std::string& text) {
  std::map<std::string, int> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw IoError(cat("bad config line in checkpoint: '", line, "'"));
    }
    try {
      kv[line.substr(0, eq)] = std::stoi(line.substr(eq + 1));
    } catch (const std::exception&) {
      throw IoError(cat("bad config value in checkpoint: '", line, "'"));
    }
  }
  ModelConfig c;
  auto take = [&](const char* key, int& out) {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(cat("checkpoint config missing key ", key));
    out = it->second;
    kv.erase(it);
  };
  take("vocab_size", c.vocab_size);
  take("d_model", c.d_model);
  take("n_layers", c.n_layers);
  take("n_heads", c.n_heads);
  take("d_ffn", c.d_ffn);
  take("d_reward", c.d_reward);
  take("max_seq_len", c.max_seq_len);
  if (!kv.empty()) {
    throw IoError(cat("checkpoint config has unknown key ", kv.begin()->first));
  }
  c.validate();
  return c;
}

void save_checkpoint(const std::string& path, const RewardTransformer& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(cat("cannot open ", path, " for writing"));
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  const std::string cfg = config_text(model.config);
  write_u32(os, static_cast<uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto params = model.parameters();
  write_u32(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    write_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t d : t.shape()) write_u64(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw IoError(cat("write to ", path, " failed"));
}

RewardTransformer load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(cat("cannot open ", path, " for reading"));
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw IoError(cat(path, " is not a checkpoint (bad magic)"));
  }
  const uint32_t version = read_u32(is, "version");
  if (version != kVersion) {
    throw IoError(cat("unsupported checkpoint version ", version));
  }
  const uint32_t cfg_len = read_u32(is, "config length");
  std::string cfg(cfg_len, '\0');
  if (!is.read(cfg.data(), cfg_len)) throw IoError("checkpoint truncated in config");
  RewardTransformer model = RewardTransformer::zeros(parse_config_text(cfg));

  std::map<std::string, Tensor> expected;
  for (auto& [name, t] : model.parameters()) expected.emplace(name, t);

  const uint32_t count = read_u32(is, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is, "tensor name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("checkpoint truncated in name");
    const uint32_t rank = read_u32(is, cat("rank of ", name));
    std::vector<int64_t> shape(rank);
    for (uint32_t r = 0; r < rank; ++r) {
      shape[r] = static_cast<int64_t>(read_u64(is, cat("dims of ", name)));
    }
    auto it = expected.find(name);
    if (it == expected.end()) {
      throw IoError(cat("checkpoint has unknown tensor '", name, "'"));
    }
    if (it->second.shape() != shape) {
      throw IoError(cat("tensor '", name, "' has shape ", shape_str(shape),
                        " but the config implies ", shape_str(it->second.shape())));
    }
    Tensor dst = it->second;
    auto& data = dst.mutable_data();
    if (!is.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw IoError(cat("checkpoint truncated in data of '", name, "'"));
    }
    expected.erase(it);
  }
  if (!expected.empty()) {
    throw IoError(cat("checkpoint is missing tensor '", expected.begin()->first, "'"));
  }
  return model;
}

}  // namespace sla
