#include "mir/dataset_io.hpp"

#include <cmath>

#include "mir/io.hpp"

namespace mir::dataset {

namespace {

constexpr char kMagic[4] = {'M', 'I', 'R', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr char kTensorMagic[4] = {'F', 'T', 'N', 'S'};

void put_tensor_block(std::string& out, const Shape& dims4, const std::vector<float>& data) {
  out.append(kTensorMagic, 4);
  io::put_u16(out, 1);      // container version
  out.push_back(1);         // dtype f32
  out.push_back(0);         // reserved
  for (int i = 0; i < 4; ++i) io::put_u32(out, static_cast<std::uint32_t>(dims4[static_cast<std::size_t>(i)]));
  for (float v : data) io::put_f32(out, v);
}

}  // namespace

void write_examples(const std::string& path,
                    const std::vector<pipeline::LabeledExample>& examples) {
  std::string out;
  out.append(kMagic, 4);
  io::put_u16(out, kVersion);
  const bool frames =
      !examples.empty() && examples.front().modality == ingest::Modality::Frames;
  out.push_back(frames ? 1 : 0);
  out.push_back(0);  // reserved
  io::put_u32(out, static_cast<std::uint32_t>(examples.size()));

  for (const auto& e : examples) {
    require((e.modality == ingest::Modality::Frames) == frames, Err::ConfigMismatch,
            "cannot mix modalities in one split file");
    for (float v : e.data)
      require(std::isfinite(v), Err::RangeError, "refusing to write non-finite window value");
    out.push_back(static_cast<char>(e.label));
    io::put_u16(out, static_cast<std::uint16_t>(e.prov.subject));
    out.push_back(static_cast<char>(e.prov.activity));
    io::put_u16(out, static_cast<std::uint16_t>(e.prov.trial));
    out.push_back(static_cast<char>(e.prov.group));
    io::put_u32(out, static_cast<std::uint32_t>(e.prov.start));
    Shape dims4;
    if (e.modality == ingest::Modality::Signal) {
      require(e.dims.size() == 2, Err::ShapeMismatch, "signal windows must be [L,C]");
      dims4 = {e.dims[0], e.dims[1], 1, 1};
    } else {
      require(e.dims.size() == 4, Err::ShapeMismatch, "frame windows must be [F,H,W,C]");
      dims4 = e.dims;
    }
    require(numel_of(dims4) == static_cast<std::int64_t>(e.data.size()), Err::ShapeMismatch,
            "window payload does not match dims");
    put_tensor_block(out, dims4, e.data);
  }
  io::write_file(path, out);
}

std::vector<pipeline::LabeledExample> read_examples(const std::string& path) {
  const std::string bytes = io::read_file(path);
  io::Reader r(bytes, "split file '" + path + "'");
  require(r.bytes(4) == std::string(kMagic, 4), Err::BadMagic,
          "'" + path + "' is not a prepared split file");
  const std::uint16_t version = r.u16();
  require(version == kVersion, Err::UnsupportedVersion,
          "'" + path + "': split file version " + std::to_string(version));
  const std::uint8_t modality_byte = r.u8();
  require(modality_byte <= 1, Err::CorruptPayload, "'" + path + "': bad modality byte");
  (void)r.u8();
  const std::uint32_t count = r.u32();

  std::vector<pipeline::LabeledExample> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    pipeline::LabeledExample e;
    const std::uint8_t label = r.u8();
    require(label < pipeline::kNumClasses, Err::LabelOutOfRange,
            "'" + path + "': class id " + std::to_string(label));
    e.label = static_cast<pipeline::ClassLabel>(label);
    e.modality = modality_byte ? ingest::Modality::Frames : ingest::Modality::Signal;
    e.prov.subject = r.u16();
    const std::uint8_t act = r.u8();
    require(act < 4, Err::CorruptPayload, "'" + path + "': bad activity byte");
    e.prov.activity = static_cast<ingest::Activity>(act);
    e.prov.trial = r.u16();
    const std::uint8_t grp = r.u8();
    require(grp < 2, Err::CorruptPayload, "'" + path + "': bad group byte");
    e.prov.group = static_cast<pipeline::Group>(grp);
    e.prov.start = r.u32();

    require(r.bytes(4) == std::string(kTensorMagic, 4), Err::BadMagic,
            "'" + path + "': record " + std::to_string(i) + " missing tensor block");
    require(r.u16() == 1, Err::UnsupportedVersion, "'" + path + "': tensor block version");
    require(r.u8() == 1, Err::UnsupportedVersion, "'" + path + "': tensor block dtype");
    (void)r.u8();
    Shape dims4(4);
    for (auto& d : dims4) d = r.u32();
    const std::int64_t n = numel_of(dims4);
    e.data.resize(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) e.data[static_cast<std::size_t>(j)] = r.f32();
    e.dims = modality_byte ? dims4 : Shape{dims4[0], dims4[1]};
    if (!modality_byte)
      require(dims4[2] == 1 && dims4[3] == 1, Err::CorruptPayload,
              "'" + path + "': signal window with non-trivial trailing dims");
    out.push_back(std::move(e));
  }
  require(r.remaining() == 0, Err::CorruptPayload,
          "'" + path + "': " + std::to_string(r.remaining()) + " trailing bytes");
  return out;
}

}  // namespace mir::dataset
