#pragma once
// COOLCKP1 checkpoint files: version, config hash/seed/step, canonical config
// text, vocabulary and label tables, then name-sorted tensor records
// (name, rank, dims as u32 LE, raw f64 LE payload) and a trailing CRC32 over
// everything before it. Save -> load -> save is byte-identical.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "cool/common.hpp"
#include "cool/config.hpp"
#include "cool/data.hpp"
#include "cool/nn.hpp"
#include "cool/optim.hpp"
#include "cool/tensor.hpp"

namespace cool {

struct Checkpoint {
  std::uint32_t version = 1;
  ModelConfig cfg;
  std::string config_text;  // canonical form, hashed
  std::vector<std::string> vocab_tokens;
  std::vector<std::string> label_names;
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;  // params + optimizer moments
};

namespace detail_ckpt {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_string(std::string& buf, const std::string& s) {
  put_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf += s;
}

inline void put_f64(std::string& buf, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;

  void need(std::size_t n) const {
    if (at + n > buf.size()) throw Error("checkpoint: truncated section");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
    at += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
};

}  // namespace detail_ckpt

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  using namespace detail_ckpt;
  std::string buf;
  buf += "COOLCKP1";
  put_u32(buf, ckpt.version);
  put_u64(buf, fnv1a64(ckpt.config_text));
  put_u64(buf, ckpt.seed);
  put_u64(buf, ckpt.step);
  put_string(buf, ckpt.config_text);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.vocab_tokens.size()));
  for (const auto& t : ckpt.vocab_tokens) put_string(buf, t);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.label_names.size()));
  for (const auto& l : ckpt.label_names) put_string(buf, l);
  put_u32(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {  // std::map: sorted by name
    put_string(buf, name);
    put_u32(buf, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : tensor.data()) put_f64(buf, v);
  }
  put_u32(buf, crc32(buf.data(), buf.size()));
  return buf;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  using namespace detail_ckpt;
  if (buf.size() < 12 || buf.compare(0, 8, "COOLCKP1") != 0) {
    throw Error("checkpoint: bad magic (not a COOLCKP1 file)");
  }
  Reader tail{buf, buf.size() - 4};
  const std::uint32_t expect = tail.u32();
  const std::uint32_t actual = crc32(buf.data(), buf.size() - 4);
  if (expect != actual) throw Error("checkpoint: checksum mismatch (corrupt file)");

  Reader r{buf, 8};
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != 1) {
    throw Error("checkpoint: unsupported version " + std::to_string(ckpt.version));
  }
  const std::uint64_t hash = r.u64();
  ckpt.seed = r.u64();
  ckpt.step = r.u64();
  ckpt.config_text = r.str();
  if (fnv1a64(ckpt.config_text) != hash) {
    throw Error("checkpoint: config hash does not match config text");
  }
  ckpt.cfg = parse_config_text(ckpt.config_text);
  const std::uint32_t vocab_count = r.u32();
  for (std::uint32_t i = 0; i < vocab_count; ++i) ckpt.vocab_tokens.push_back(r.str());
  const std::uint32_t label_count = r.u32();
  for (std::uint32_t i = 0; i < label_count; ++i) ckpt.label_names.push_back(r.str());
  const std::uint32_t tensor_count = r.u32();
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    std::vector<double> data(shape_numel(shape));
    for (double& v : data) v = r.f64();
    ckpt.tensors.emplace(name, Tensor::from(std::move(shape), std::move(data)));
  }
  if (r.at != buf.size() - 4) throw Error("checkpoint: trailing bytes before checksum");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string buf = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

// Copies current parameter values (and optimizer moments as adamw.m.* /
// adamw.v.*) into a checkpoint snapshot.
inline Checkpoint snapshot_checkpoint(const ModelConfig& cfg, const ParameterStore& store,
                                      const Vocab& vocab,
                                      const std::vector<std::string>& label_names,
                                      std::uint64_t step, const AdamWState* adam = nullptr) {
  Checkpoint ckpt;
  ckpt.cfg = cfg;
  ckpt.config_text = config_canonical_text(cfg);
  ckpt.vocab_tokens = vocab.tokens();
  ckpt.label_names = label_names;
  ckpt.step = step;
  ckpt.seed = cfg.seed;
  for (const auto& [name, tensor] : store.items()) {
    ckpt.tensors.emplace(name, Tensor::from(tensor.shape(), tensor.data()));
  }
  if (adam) {
    for (const auto& [name, values] : adam->m) {
      ckpt.tensors.emplace("adamw.m." + name, Tensor::from(store.at(name).shape(), values));
    }
    for (const auto& [name, values] : adam->v) {
      ckpt.tensors.emplace("adamw.v." + name, Tensor::from(store.at(name).shape(), values));
    }
  }
  return ckpt;
}

// Writes checkpoint tensor values back into a freshly assembled store.
inline void restore_parameters(const Checkpoint& ckpt, ParameterStore& store) {
  for (auto& [name, param] : store.items()) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw Error("checkpoint: missing tensor '" + name + "'");
    }
    if (it->second.shape() != param.shape()) {
      throw Error("checkpoint: tensor '" + name + "' has shape " +
                  shape_str(it->second.shape()) + ", model expects " + shape_str(param.shape()));
    }
    param.mutable_data() = it->second.data();
  }
}

}  // namespace cool
