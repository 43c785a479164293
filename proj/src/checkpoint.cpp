#include "mir/models/checkpoint.hpp"

#include <cstdint>
#include <string>

#include "mir/io.hpp"

namespace mir::models {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'L', 'C'};

// Tensor record: name length + name + rank + dims + f64 payload, followed by
// the CRC32 of exactly those bytes.
void put_tensor_record(std::string& out, const std::string& name, const Tensor& t) {
  std::string rec;
  io::put_u32(rec, static_cast<std::uint32_t>(name.size()));
  rec.append(name);
  io::put_u32(rec, static_cast<std::uint32_t>(t.rank()));
  for (std::int64_t i = 0; i < t.rank(); ++i)
    io::put_u32(rec, static_cast<std::uint32_t>(t.dim(i)));
  for (std::int64_t i = 0; i < t.numel(); ++i) io::put_f64(rec, t[i]);
  out += rec;
  io::put_u32(out, io::crc32(rec));
}

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::string buf(kMagic, 4);
  io::put_u16(buf, c.version);
  io::put_u32(buf, static_cast<std::uint32_t>(c.config_json.size()));
  buf.append(c.config_json);
  io::put_u64(buf, c.seed);

  io::put_u32(buf, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& [name, tensor] : c.tensors) put_tensor_record(buf, name, tensor);

  io::put_u32(buf, static_cast<std::uint32_t>(c.freeze.size()));
  for (const auto& [name, trainable] : c.freeze) {
    io::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf.append(name);
    buf.push_back(trainable ? char(1) : char(0));
  }

  buf.push_back(c.has_optimizer ? char(1) : char(0));
  if (c.has_optimizer) {
    io::put_u64(buf, c.optimizer_steps);
    io::put_u32(buf, static_cast<std::uint32_t>(c.optimizer.size()));
    for (const auto& slot : c.optimizer) {
      require(slot.m.size() == slot.v.size(), Err::ShapeMismatch,
              "optimizer slot '" + slot.name + "' has mismatched moment lengths");
      io::put_u32(buf, static_cast<std::uint32_t>(slot.name.size()));
      buf.append(slot.name);
      io::put_u32(buf, static_cast<std::uint32_t>(slot.m.size()));
      for (double v : slot.m) io::put_f64(buf, v);
      for (double v : slot.v) io::put_f64(buf, v);
    }
  }

  io::put_u32(buf, io::crc32(buf));
  io::write_file(path, buf);
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::string bytes = io::read_file(path);
  require(bytes.size() >= 4 + 2 + 4 + 4, Err::CorruptPayload,
          "'" + path + "' is too short to be a checkpoint");
  const std::string body = bytes.substr(0, bytes.size() - 4);
  {
    io::Reader tail(bytes, "checkpoint");
    tail.bytes(bytes.size() - 4);
    require(tail.u32() == io::crc32(body), Err::CorruptPayload,
            "'" + path + "': checkpoint checksum mismatch");
  }

  try {
    io::Reader r(body, "checkpoint");
    require(r.bytes(4) == std::string(kMagic, 4), Err::CorruptPayload,
            "'" + path + "' is not a MILC checkpoint");
    Checkpoint c;
    c.version = r.u16();
    require(c.version == kCheckpointVersion, Err::VersionMismatch,
            "checkpoint version " + std::to_string(c.version) + ", expected " +
                std::to_string(kCheckpointVersion));
    c.config_json = r.bytes(r.u32());
    c.seed = r.u64();

    const std::uint32_t n_tensors = r.u32();
    c.tensors.reserve(n_tensors);
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
      const std::size_t start = r.pos();
      const std::string name = r.bytes(r.u32());
      const std::uint32_t rank = r.u32();
      require(rank >= 1 && rank <= 8, Err::CorruptPayload,
              "tensor '" + name + "' has implausible rank " + std::to_string(rank));
      Shape shape(rank);
      std::int64_t numel = 1;
      for (auto& d : shape) {
        d = static_cast<std::int64_t>(r.u32());
        require(d >= 1, Err::CorruptPayload, "tensor '" + name + "' has a zero dimension");
        numel *= d;
        require(numel <= (std::int64_t(1) << 40), Err::CorruptPayload,
                "tensor '" + name + "' has an implausible element count");
      }
      Tensor t(shape);
      for (std::int64_t k = 0; k < numel; ++k) t[k] = r.f64();
      const std::string rec = body.substr(start, r.pos() - start);
      require(r.u32() == io::crc32(rec), Err::CorruptPayload,
              "tensor '" + name + "': record checksum mismatch");
      c.tensors.emplace_back(name, std::move(t));
    }

    const std::uint32_t n_flags = r.u32();
    c.freeze.reserve(n_flags);
    for (std::uint32_t i = 0; i < n_flags; ++i) {
      const std::string name = r.bytes(r.u32());
      c.freeze.emplace_back(name, r.u8() != 0);
    }

    c.has_optimizer = r.u8() != 0;
    if (c.has_optimizer) {
      c.optimizer_steps = r.u64();
      const std::uint32_t n_slots = r.u32();
      c.optimizer.reserve(n_slots);
      for (std::uint32_t i = 0; i < n_slots; ++i) {
        OptimizerSlot slot;
        slot.name = r.bytes(r.u32());
        const std::uint32_t n = r.u32();
        slot.m.resize(n);
        for (auto& v : slot.m) v = r.f64();
        slot.v.resize(n);
        for (auto& v : slot.v) v = r.f64();
        c.optimizer.push_back(std::move(slot));
      }
    }
    require(r.remaining() == 0, Err::CorruptPayload,
            "'" + path + "': " + std::to_string(r.remaining()) + " trailing bytes");
    return c;
  } catch (const Error& e) {
    // A truncated read inside the body means the length fields are lies even
    // though the outer checksum passed; report it as a corrupt payload.
    if (e.kind() == Err::DimensionMismatch)
      raise(Err::CorruptPayload, "'" + path + "': " + e.what());
    throw;
  }
}

}  // namespace mir::models
