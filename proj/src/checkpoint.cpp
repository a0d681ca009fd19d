// Copyright 2026 The fairkd Authors
// SPDX-License-Identifier: Apache-2.0

#include "fairkd/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fairkd/error.hpp"

namespace fairkd {
namespace {

constexpr char kMagic[4] = {'F', 'K', 'D', '1'};
// Guards against absurd allocations when a manifest is corrupt.
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint32_t kMaxName = 4096;

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& data() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::size_t end) : b_(b), end_(end) {}
  std::size_t pos() const { return pos_; }
  void need(std::size_t n, const char* what) const {
    if (end_ - pos_ < n) {
      throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string str(const char* what, std::uint32_t max_len) {
    const std::size_t at = pos_;
    const std::uint32_t n = u32(what);
    if (n > max_len) throw FormatError(std::string("checkpoint ") + what + " is too long", at);
    need(n, what);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  const std::uint8_t* take(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = b_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::string encode_metadata(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw ValueError("checkpoint: metadata entry '" + k + "' contains '=' or a newline");
    }
    out += k + "=" + v + "\n";
  }
  return out;
}

std::map<std::string, std::string> decode_metadata(const std::string& text, std::size_t offset) {
  std::map<std::string, std::string> meta;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError("checkpoint metadata line '" + line + "' is not key=value", offset);
    }
    meta[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return meta;
}

std::string meta_get(const std::map<std::string, std::string>& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw FormatError("checkpoint metadata lacks '" + key + "'", 0);
  return it->second;
}

}  // namespace

const CheckpointTensor* CheckpointFile::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(file.version);
  w.str(encode_metadata(file.metadata));
  w.u32(static_cast<std::uint32_t>(file.tensors.size()));
  for (const auto& t : file.tensors) {
    if (t.values.size() != numel(t.shape)) {
      throw ShapeError("checkpoint: tensor '" + t.name + "' has " + std::to_string(t.values.size()) +
                       " values for shape " + to_string(t.shape));
    }
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t e : t.shape) w.u64(e);
  }
  for (const auto& t : file.tensors) {
    for (float f : t.values) w.u32(std::bit_cast<std::uint32_t>(f));
  }
  const std::uint32_t crc = crc_of(w.data().data(), w.data().size());
  w.u32(crc);
  return std::move(w.data());
}

CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a fairkd checkpoint (bad magic)", 0);
  }
  if (bytes.size() < 12) throw FormatError("checkpoint truncated in the header", bytes.size());
  const std::size_t body_end = bytes.size() - 4;
  Reader r(bytes, body_end);
  r.take(4, "magic");
  CheckpointFile file;
  file.version = r.u32("version");
  if (file.version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(file.version), 4);
  }
  const std::size_t meta_at = r.pos();
  file.metadata = decode_metadata(r.str("metadata", 1u << 24), meta_at);
  const std::uint32_t count = r.u32("tensor count");
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str("tensor name", kMaxName);
    const std::size_t rank_at = r.pos();
    const std::uint32_t rank = r.u32("tensor rank");
    if (rank > kMaxRank) {
      throw FormatError("tensor '" + t.name + "' has implausible rank " + std::to_string(rank), rank_at);
    }
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::size_t dim_at = r.pos();
      const std::uint64_t e = r.u64("tensor shape");
      if (e == 0 || e > body_end || n > body_end / e) {
        throw FormatError("tensor '" + t.name + "' has an implausible shape", dim_at);
      }
      n *= e;
      t.shape.push_back(static_cast<std::size_t>(e));
    }
    sizes.push_back(static_cast<std::size_t>(n));
    file.tensors.push_back(std::move(t));
  }
  for (std::size_t i = 0; i < file.tensors.size(); ++i) {
    const std::uint8_t* p = r.take(sizes[i] * 4, "tensor payload");
    auto& vals = file.tensors[i].values;
    vals.resize(sizes[i]);
    for (std::size_t j = 0; j < sizes[i]; ++j) {
      const std::uint32_t u = static_cast<std::uint32_t>(p[4 * j]) |
                              static_cast<std::uint32_t>(p[4 * j + 1]) << 8 |
                              static_cast<std::uint32_t>(p[4 * j + 2]) << 16 |
                              static_cast<std::uint32_t>(p[4 * j + 3]) << 24;
      vals[j] = std::bit_cast<float>(u);
    }
  }
  if (r.pos() != body_end) throw FormatError("trailing bytes after the tensor payloads", r.pos());
  Reader tail(bytes, bytes.size());
  tail.take(body_end, "body");
  const std::uint32_t stored = tail.u32("checksum");
  if (stored != crc_of(bytes.data(), body_end)) {
    throw FormatError("checkpoint checksum mismatch", body_end);
  }
  return file;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const auto bytes = encode_checkpoint(file);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for checkpoint " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

std::map<std::string, std::string> config_metadata(const EncoderConfig& c) {
  std::ostringstream eps;
  eps.precision(17);
  eps << c.layer_norm_eps;
  return {{"config.num_layers", std::to_string(c.num_layers)},
          {"config.hidden_size", std::to_string(c.hidden_size)},
          {"config.num_heads", std::to_string(c.num_heads)},
          {"config.ff_dim", std::to_string(c.ff_dim)},
          {"config.vocab_size", std::to_string(c.vocab_size)},
          {"config.max_seq_len", std::to_string(c.max_seq_len)},
          {"config.tie_lm_head", c.tie_lm_head ? "1" : "0"},
          {"config.layer_norm_eps", eps.str()}};
}

EncoderConfig config_from_metadata(const std::map<std::string, std::string>& m) {
  EncoderConfig c;
  try {
    c.num_layers = std::stoul(meta_get(m, "config.num_layers"));
    c.hidden_size = std::stoul(meta_get(m, "config.hidden_size"));
    c.num_heads = std::stoul(meta_get(m, "config.num_heads"));
    c.ff_dim = std::stoul(meta_get(m, "config.ff_dim"));
    c.vocab_size = std::stoul(meta_get(m, "config.vocab_size"));
    c.max_seq_len = std::stoul(meta_get(m, "config.max_seq_len"));
    c.tie_lm_head = meta_get(m, "config.tie_lm_head") == "1";
    c.layer_norm_eps = std::stod(meta_get(m, "config.layer_norm_eps"));
  } catch (const std::logic_error& e) {
    throw FormatError(std::string("checkpoint config metadata is malformed: ") + e.what(), 0);
  }
  c.validate();
  return c;
}

CheckpointFile make_checkpoint(const EncoderWeights<float>& weights,
                               const std::map<std::string, std::string>& extra) {
  CheckpointFile file;
  file.metadata = extra;
  for (auto& [k, v] : config_metadata(weights.config)) file.metadata[k] = v;
  for (const auto& p : weights.parameters()) {
    auto v = p.tensor.values();
    file.tensors.push_back({p.name, p.tensor.shape(), std::vector<float>(v.begin(), v.end())});
  }
  return file;
}

EncoderWeights<float> weights_from_checkpoint(const CheckpointFile& file) {
  const EncoderConfig config = config_from_metadata(file.metadata);
  EncoderWeights<float> w = build_encoder<float>(config, 0);
  w.set_trainable(false);
  const auto params = w.parameters();
  if (file.tensors.size() != params.size()) {
    throw FormatError("checkpoint holds " + std::to_string(file.tensors.size()) +
                          " tensors, the config implies " + std::to_string(params.size()),
                      0);
  }
  for (const auto& p : params) {
    const CheckpointTensor* t = file.find(p.name);
    if (t == nullptr) throw FormatError("checkpoint lacks tensor '" + p.name + "'", 0);
    if (t->shape != p.tensor.shape()) {
      throw FormatError("tensor '" + p.name + "' has shape " + to_string(t->shape) + ", expected " +
                            to_string(p.tensor.shape()),
                        0);
    }
    Tensor<float> dst = p.tensor;
    std::copy(t->values.begin(), t->values.end(), dst.mutable_values().begin());
  }
  return w;
}

void save_encoder(const std::filesystem::path& path, const EncoderWeights<float>& weights,
                  const std::map<std::string, std::string>& extra) {
  write_checkpoint(path, make_checkpoint(weights, extra));
}

EncoderWeights<float> load_encoder(const std::filesystem::path& path,
                                   std::map<std::string, std::string>* metadata) {
  CheckpointFile file = read_checkpoint(path);
  if (metadata) *metadata = file.metadata;
  return weights_from_checkpoint(file);
}

}  // namespace fairkd
