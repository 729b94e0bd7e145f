#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mbc/common.hpp"

namespace mbc {

// Checkpoint file layout (all integers little-endian):
//   "MBCCKPT1"  magic
//   u32         format version (currently 1)
//   u64         payload byte count
//   payload     see below
//   u64         FNV-1a checksum of the payload
// payload:
//   u32 stage, u64 iteration, f64 tau
//   u32 config_len, config bytes (canonical JSON)
//   u32 n_rng    { u32 name_len, name, 4 x u64 }
//   u32 n_blocks { u32 name_len, name, u8 dtype (0=f64, 1=u64),
//                  u32 ndims, ndims x u64 dims, prod(dims) x 8 bytes }

constexpr char kCkptMagic[8] = {'M', 'B', 'C', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kCkptVersion = 1;

struct ParamBlock {
  std::string name;
  std::vector<uint64_t> shape;
  uint8_t dtype = 0;  // 0 = f64, 1 = u64
  std::vector<double> f64;
  std::vector<uint64_t> u64;

  bool is_u64() const { return dtype == 1; }
  uint64_t count() const {
    uint64_t n = 1;
    for (uint64_t d : shape) n *= d;
    return n;
  }
};

struct RngRecord {
  std::string name;
  std::array<uint64_t, 4> state{};
};

struct CheckpointContainer {
  uint32_t stage = 1;
  uint64_t iteration = 0;
  double tau = 0.0;
  std::string config_text;
  std::vector<RngRecord> rng_states;
  std::vector<ParamBlock> blocks;

  ParamBlock& add_f64(const std::string& name, std::vector<uint64_t> shape,
                      std::vector<double> data) {
    blocks.push_back(ParamBlock{name, std::move(shape), 0, std::move(data), {}});
    return blocks.back();
  }
  ParamBlock& add_u64(const std::string& name, std::vector<uint64_t> shape,
                      std::vector<uint64_t> data) {
    blocks.push_back(ParamBlock{name, std::move(shape), 1, {}, std::move(data)});
    return blocks.back();
  }

  const ParamBlock* find(const std::string& name) const {
    for (const auto& b : blocks)
      if (b.name == name) return &b;
    return nullptr;
  }
  const ParamBlock& require(const std::string& name) const {
    const ParamBlock* b = find(name);
    check(b != nullptr, "checkpoint schema error: missing block '" + name + "'");
    return *b;
  }

  void add_rng(const std::string& name, const Rng& rng) {
    rng_states.push_back(RngRecord{name, rng.s});
  }
  Rng require_rng(const std::string& name) const {
    for (const auto& r : rng_states)
      if (r.name == name) {
        Rng rng;
        rng.s = r.state;
        return rng;
      }
    throw std::runtime_error("checkpoint schema error: missing rng stream '" + name + "'");
  }
};

namespace ckptio {

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& out, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    check(pos + n <= buf.size(), "checkpoint truncated");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string str() {
    const uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace ckptio

inline std::string serialize_checkpoint(const CheckpointContainer& c) {
  std::string payload;
  ckptio::put_u32(payload, c.stage);
  ckptio::put_u64(payload, c.iteration);
  ckptio::put_f64(payload, c.tau);
  ckptio::put_str(payload, c.config_text);
  ckptio::put_u32(payload, static_cast<uint32_t>(c.rng_states.size()));
  for (const auto& r : c.rng_states) {
    ckptio::put_str(payload, r.name);
    for (uint64_t w : r.state) ckptio::put_u64(payload, w);
  }
  ckptio::put_u32(payload, static_cast<uint32_t>(c.blocks.size()));
  for (const auto& b : c.blocks) {
    ckptio::put_str(payload, b.name);
    payload.push_back(b.is_u64() ? 1 : 0);
    ckptio::put_u32(payload, static_cast<uint32_t>(b.shape.size()));
    for (uint64_t d : b.shape) ckptio::put_u64(payload, d);
    const uint64_t n = b.count();
    if (b.is_u64()) {
      check(b.u64.size() == n, "block '" + b.name + "' element count does not match its shape");
      for (uint64_t v : b.u64) ckptio::put_u64(payload, v);
    } else {
      check(b.f64.size() == n, "block '" + b.name + "' element count does not match its shape");
      for (double v : b.f64) ckptio::put_f64(payload, v);
    }
  }

  std::string file;
  file.append(kCkptMagic, 8);
  ckptio::put_u32(file, kCkptVersion);
  ckptio::put_u64(file, payload.size());
  file.append(payload);
  ckptio::put_u64(file, fnv1a64(payload.data(), payload.size()));
  return file;
}

/// Atomic write: temp file in the target directory, then rename.
inline void save_checkpoint(const CheckpointContainer& c, const std::string& path) {
  const std::string bytes = serialize_checkpoint(c);
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    check(f.good(), "cannot open for writing: " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    check(f.good(), "write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

inline CheckpointContainer parse_checkpoint(const std::string& file) {
  check(file.size() >= 8 + 4 + 8 + 8, "checkpoint truncated");
  check(std::memcmp(file.data(), kCkptMagic, 8) == 0, "not a checkpoint file (bad magic)");
  ckptio::Reader hdr{file, 8};
  const uint32_t version = hdr.u32();
  check(version == kCkptVersion, "checkpoint version mismatch: file has " + std::to_string(version) +
                                     ", expected " + std::to_string(kCkptVersion));
  const uint64_t payload_len = hdr.u64();
  check(hdr.pos + payload_len + 8 <= file.size(), "checkpoint truncated");
  const std::string payload = file.substr(hdr.pos, payload_len);
  ckptio::Reader tail{file, hdr.pos + payload_len};
  const uint64_t stored_sum = tail.u64();
  check(fnv1a64(payload.data(), payload.size()) == stored_sum, "checkpoint checksum failure");

  ckptio::Reader r{payload, 0};
  CheckpointContainer c;
  c.stage = r.u32();
  c.iteration = r.u64();
  c.tau = r.f64();
  c.config_text = r.str();
  const uint32_t n_rng = r.u32();
  for (uint32_t i = 0; i < n_rng; ++i) {
    RngRecord rec;
    rec.name = r.str();
    for (auto& w : rec.state) w = r.u64();
    c.rng_states.push_back(std::move(rec));
  }
  const uint32_t n_blocks = r.u32();
  for (uint32_t i = 0; i < n_blocks; ++i) {
    ParamBlock b;
    b.name = r.str();
    r.need(1);
    b.dtype = static_cast<uint8_t>(payload[r.pos]);
    const uint8_t dtype = b.dtype;
    r.pos += 1;
    const uint32_t ndims = r.u32();
    for (uint32_t d = 0; d < ndims; ++d) b.shape.push_back(r.u64());
    const uint64_t n = b.count();
    check(n < (1ULL << 32), "checkpoint schema error: implausible block size");
    if (dtype == 1) {
      b.u64.reserve(n);
      for (uint64_t k = 0; k < n; ++k) b.u64.push_back(r.u64());
    } else {
      b.f64.reserve(n);
      for (uint64_t k = 0; k < n; ++k) b.f64.push_back(r.f64());
    }
    c.blocks.push_back(std::move(b));
  }
  return c;
}

inline CheckpointContainer load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

/// Parameter blocks every checkpoint of the given stage must carry.
inline void validate_checkpoint_schema(const CheckpointContainer& c) {
  const std::vector<std::string> stage1 = {"blind.actor", "blind.logstd",  "blind.critic",
                                           "blind.priv",  "blind.history", "vae.encoder",
                                           "vae.decoder"};
  for (const auto& n : stage1) c.require(n);
  if (c.stage >= 2) {
    for (const auto& n : {"percep.actor", "percep.logstd", "percep.critic"}) c.require(n);
  }
}

}  // namespace mbc
