#pragma once
// Global encoder: token + position + segment embeddings through a stack of
// encoder blocks and a final norm. Also owns the COOLEMB1 matrix file format
// used to replay externally produced embeddings through the rest of the
// model.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cool/nn.hpp"
#include "cool/tensor.hpp"

namespace cool {

struct GlobalEncoderParams {
  std::size_t hidden = 0;
  std::size_t max_len = 0;
  Tensor token_table;     // [V, H]
  Tensor position_table;  // [Lmax, H]
  Tensor segment_table;   // [2, H] question vs. passage
  std::vector<EncoderBlockParams> blocks;
  LayerNormParams final_norm;
};

inline GlobalEncoderParams make_global_encoder(ParameterStore& store, const std::string& prefix,
                                               std::size_t vocab, std::size_t hidden,
                                               std::size_t max_len, std::size_t num_blocks,
                                               std::size_t heads, Rng& rng) {
  GlobalEncoderParams p;
  p.hidden = hidden;
  p.max_len = max_len;
  p.token_table = store.add(prefix + ".token_table", make_embedding_table(vocab, hidden, rng));
  p.position_table =
      store.add(prefix + ".position_table", make_embedding_table(max_len, hidden, rng));
  p.segment_table = store.add(prefix + ".segment_table", make_embedding_table(2, hidden, rng));
  for (std::size_t b = 0; b < num_blocks; ++b) {
    p.blocks.push_back(
        make_encoder_block(store, prefix + ".block" + std::to_string(b), hidden, heads, rng));
  }
  p.final_norm = make_layer_norm(store, prefix + ".final_norm", hidden);
  return p;
}

// Embedding stage only: sum of token/position/segment embeddings, [L, H].
inline Tensor encoder_embed(const GlobalEncoderParams& p, const std::vector<long>& ids,
                            const std::vector<long>& segments) {
  if (ids.size() > p.max_len) {
    throw Error("encoder: sequence length " + std::to_string(ids.size()) + " exceeds maximum " +
                std::to_string(p.max_len));
  }
  if (segments.size() != ids.size()) throw Error("encoder: segment length mismatch");
  std::vector<long> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<long>(i);
  for (long s : segments) {
    if (s != 0 && s != 1) throw Error("encoder: segment ids must be 0 or 1");
  }
  return add(add(embed(p.token_table, ids), embed(p.position_table, positions)),
             embed(p.segment_table, segments));
}

// Block stack + final norm over an already-embedded sequence.
inline Tensor encoder_run(const GlobalEncoderParams& p, const Tensor& h,
                          const std::vector<std::uint8_t>& mask, const ForwardCtx& ctx = {}) {
  Tensor out = h;
  for (const auto& block : p.blocks) out = encoder_block(block, out, mask, ctx);
  return layer_norm(p.final_norm, out);
}

inline Tensor encode_sequence(const GlobalEncoderParams& p, const std::vector<long>& ids,
                              const std::vector<long>& segments,
                              const std::vector<std::uint8_t>& mask, const ForwardCtx& ctx = {}) {
  return encoder_run(p, encoder_embed(p, ids, segments), mask, ctx);
}

// ---------------------------------------------------------------------------
// embedding-matrix file: "COOLEMB1", u32 L, u32 H (little endian), then
// L*H doubles, row-major little endian
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& out, std::uint32_t v) {
  char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 4);
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw Error("truncated file while reading u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw Error("truncated file while reading u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f64(std::ostream& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  write_u64(out, bits);
}

inline double read_f64(std::istream& in) {
  const std::uint64_t bits = read_u64(in);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace detail

inline void export_embeddings(const std::string& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw Error("export_embeddings: expected an [LxH] matrix");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write("COOLEMB1", 8);
  detail::write_u32(out, static_cast<std::uint32_t>(matrix.dim(0)));
  detail::write_u32(out, static_cast<std::uint32_t>(matrix.dim(1)));
  for (double v : matrix.data()) detail::write_f64(out, v);
  if (!out) throw Error("write failed for '" + path + "'");
}

// Returns the stored matrix as a non-trainable tensor.
inline Tensor import_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "COOLEMB1") {
    throw Error("'" + path + "' is not a COOLEMB1 embedding file");
  }
  const std::uint32_t rows = detail::read_u32(in);
  const std::uint32_t cols = detail::read_u32(in);
  std::vector<double> data(static_cast<std::size_t>(rows) * cols);
  try {
    for (double& v : data) v = detail::read_f64(in);
  } catch (const Error&) {
    throw Error("'" + path + "' is truncated");
  }
  in.peek();
  if (!in.eof()) {
    throw Error("'" + path + "' has trailing bytes beyond the declared " + std::to_string(rows) +
                "x" + std::to_string(cols) + " payload");
  }
  return Tensor::from({rows, cols}, std::move(data));
}

}  // namespace cool
