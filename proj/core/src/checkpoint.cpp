#include "survpfn/checkpoint.hpp"

#include <fstream>
#include <iterator>

#include "binio.hpp"
#include "survpfn/errors.hpp"
#include "survpfn/rng.hpp"

namespace survpfn {

namespace detail {

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const unsigned char> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("failed writing " + path);
}

}  // namespace detail

namespace {

constexpr char kMagic[4] = {'S', 'P', 'F', 'N'};

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.parameters.size() != PfnModel::parameter_count(ckpt.config))
    throw DataError("checkpoint: parameter count does not match the model config");
  detail::ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  const ModelConfig& c = ckpt.config;
  w.u64(c.d_max);
  w.u64(c.width);
  w.u64(c.layers);
  w.u64(c.heads);
  w.u64(c.bins);
  w.u64(c.ffn);
  w.u64(c.seed);
  w.u8(c.parallel_swiglu ? 1 : 0);
  w.u8(c.zero_head ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(ckpt.transform));
  w.u64(ckpt.step);
  w.u64(ckpt.seed);
  w.f64s(ckpt.parameters);
  w.u8(ckpt.optimizer ? 1 : 0);
  if (ckpt.optimizer) {
    w.u64(ckpt.optimizer->step);
    w.f64s(ckpt.optimizer->m);
    w.f64s(ckpt.optimizer->v);
  }
  w.u64(fnv1a64_bytes(w.buffer()));
  return std::move(w.buffer());
}

Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 16) throw DataError("checkpoint: file too short");
  const auto body = bytes.first(bytes.size() - 8);
  detail::ByteReader tail(bytes.last(8), "checkpoint");
  if (tail.u64() != fnv1a64_bytes(body)) throw DataError("checkpoint: checksum mismatch");

  detail::ByteReader r(body, "checkpoint");
  char magic[4];
  r.bytes(magic, 4);
  if (!std::equal(magic, magic + 4, kMagic)) throw DataError("checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ModelConfig& c = ck.config;
  c.d_max = r.u64();
  c.width = r.u64();
  c.layers = r.u64();
  c.heads = r.u64();
  c.bins = r.u64();
  c.ffn = r.u64();
  c.seed = r.u64();
  c.parallel_swiglu = r.u8() != 0;
  c.zero_head = r.u8() != 0;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(TransformKind::time2quantile))
    throw DataError("checkpoint: unknown transform kind");
  ck.transform = static_cast<TransformKind>(kind);
  ck.step = r.u64();
  ck.seed = r.u64();
  ck.parameters = r.f64s();
  if (r.u8() != 0) {
    AdamState s;
    s.step = r.u64();
    s.m = r.f64s();
    s.v = r.f64s();
    if (s.m.size() != ck.parameters.size() || s.v.size() != ck.parameters.size())
      throw DataError("checkpoint: optimizer state size mismatch");
    ck.optimizer = std::move(s);
  }
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  if (ck.parameters.size() != PfnModel::parameter_count(c))
    throw DataError("checkpoint: parameter count does not match the model config");
  return ck;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

}  // namespace survpfn
