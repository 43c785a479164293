#include "mir/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mir/io.hpp"

namespace mir::ingest {

namespace {

constexpr char kMagic[4] = {'F', 'T', 'N', 'S'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_number(const std::string& token, std::size_t line_no) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  require(ec == std::errc() && ptr == last, Err::MalformedRow,
          "line " + std::to_string(line_no) + ": non-numeric token '" + token + "'");
  require(std::isfinite(v), Err::MalformedRow,
          "line " + std::to_string(line_no) + ": non-finite value '" + token + "'");
  return v;
}

}  // namespace

const char* activity_name(Activity a) {
  switch (a) {
    case Activity::Lifting: return "lifting";
    case Activity::Carrying: return "carrying";
    case Activity::Holding: return "holding";
    case Activity::Mounting: return "mounting";
  }
  return "?";
}

Activity activity_from_string(const std::string& s) {
  const std::string v = lower(trim(s));
  if (v == "lifting") return Activity::Lifting;
  if (v == "carrying") return Activity::Carrying;
  if (v == "holding") return Activity::Holding;
  if (v == "mounting") return Activity::Mounting;
  raise(Err::ParseError, "unknown activity '" + s + "'");
}

const char* modality_name(Modality m) {
  return m == Modality::Signal ? "signal" : "frames";
}

Modality modality_from_string(const std::string& s) {
  const std::string v = lower(trim(s));
  if (v == "signal") return Modality::Signal;
  if (v == "frames") return Modality::Frames;
  raise(Err::ParseError, "unknown modality '" + s + "'");
}

SignalRecording parse_signal_text(const std::string& path,
                                  const std::vector<int>& channel_columns) {
  require(!channel_columns.empty(), Err::RangeError, "channel_columns must be non-empty");
  {
    std::set<int> uniq(channel_columns.begin(), channel_columns.end());
    require(uniq.size() == channel_columns.size(), Err::RangeError,
            "channel_columns must be distinct");
    require(*uniq.begin() >= 0, Err::RangeError, "channel_columns must be non-negative");
  }

  std::ifstream in(path);
  require(in.good(), Err::MissingFile, "cannot open '" + path + "'");

  SignalRecording rec;
  rec.channels = static_cast<std::int64_t>(channel_columns.size());

  std::string line;
  std::size_t line_no = 0;
  bool in_header = true;
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (in_header && t[0] == '#') continue;
    in_header = false;
    require(t[0] != '#', Err::MalformedRow,
            "line " + std::to_string(line_no) + ": '#' line after data began");

    tokens.clear();
    std::istringstream ls(t);
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);

    const int max_col = *std::max_element(channel_columns.begin(), channel_columns.end());
    require(static_cast<int>(tokens.size()) > max_col, Err::MalformedRow,
            "line " + std::to_string(line_no) + ": " + std::to_string(tokens.size()) +
                " tokens, need column " + std::to_string(max_col));
    for (int col : channel_columns)
      rec.data.push_back(
          static_cast<float>(parse_number(tokens[static_cast<std::size_t>(col)], line_no)));
    ++rec.rows;
  }
  require(!in.bad(), Err::IoFailure, "read error on '" + path + "'");
  require(rec.rows >= 1, Err::EmptyRecording, "'" + path + "' contains no data rows");
  return rec;
}

FrameSequence read_frame_container(const std::string& path) {
  const std::string bytes = io::read_file(path);
  io::Reader r(bytes, "frame container '" + path + "'");
  r.need(4);
  require(bytes.compare(0, 4, kMagic, 4) == 0, Err::BadMagic,
          "'" + path + "' is not a frame container");
  (void)r.bytes(4);
  const std::uint16_t version = r.u16();
  require(version == kVersion, Err::UnsupportedVersion,
          "'" + path + "' has container version " + std::to_string(version) + ", expected " +
              std::to_string(kVersion));
  const std::uint8_t dtype = r.u8();
  require(dtype == kDtypeF32, Err::UnsupportedVersion,
          "'" + path + "' has dtype " + std::to_string(dtype) + ", only f32 (1) is supported");
  (void)r.u8();  // reserved

  FrameSequence seq;
  seq.t = r.u32();
  seq.h = r.u32();
  seq.w = r.u32();
  seq.c = r.u32();
  const std::int64_t n = seq.t * seq.h * seq.w * seq.c;
  require(static_cast<std::int64_t>(r.remaining()) == n * 4, Err::DimensionMismatch,
          "'" + path + "': payload is " + std::to_string(r.remaining()) + " bytes, header needs " +
              std::to_string(n * 4));
  seq.data.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) seq.data[static_cast<std::size_t>(i)] = r.f32();
  return seq;
}

void write_frame_container(const FrameSequence& seq, const std::string& path) {
  const std::int64_t n = seq.t * seq.h * seq.w * seq.c;
  require(n >= 1 && static_cast<std::size_t>(n) == seq.data.size(), Err::DimensionMismatch,
          "frame sequence dims do not match its data");
  for (float v : seq.data)
    require(std::isfinite(v), Err::RangeError, "refusing to write non-finite frame value");
  std::string out;
  out.reserve(20 + seq.data.size() * 4);
  out.append(kMagic, 4);
  io::put_u16(out, kVersion);
  out.push_back(static_cast<char>(kDtypeF32));
  out.push_back(0);  // reserved
  io::put_u32(out, static_cast<std::uint32_t>(seq.t));
  io::put_u32(out, static_cast<std::uint32_t>(seq.h));
  io::put_u32(out, static_cast<std::uint32_t>(seq.w));
  io::put_u32(out, static_cast<std::uint32_t>(seq.c));
  for (float v : seq.data) io::put_f32(out, v);
  io::write_file(path, out);
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), Err::MissingFile, "cannot open '" + path + "'");

  DatasetManifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;

    std::vector<std::string> fields;
    std::stringstream ss(t);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    require(fields.size() == 5, Err::ParseError,
            "line " + std::to_string(line_no) + ": expected 5 comma-separated fields, got " +
                std::to_string(fields.size()));

    ManifestEntry e;
    e.path = fields[0];
    require(!e.path.empty(), Err::ParseError, "line " + std::to_string(line_no) + ": empty path");
    require(seen.insert(e.path).second, Err::DuplicatePath,
            "line " + std::to_string(line_no) + ": duplicate path '" + e.path + "'");
    try {
      e.subject = std::stoi(fields[1]);
      e.trial = std::stoi(fields[3]);
    } catch (const std::exception&) {
      raise(Err::ParseError, "line " + std::to_string(line_no) + ": non-integer subject/trial");
    }
    try {
      e.activity = activity_from_string(fields[2]);
      e.modality = modality_from_string(fields[4]);
    } catch (const Error& err) {
      raise(Err::ParseError, "line " + std::to_string(line_no) + ": " + err.what());
    }
    m.entries.push_back(std::move(e));
  }
  require(!in.bad(), Err::IoFailure, "read error on '" + path + "'");
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  std::ostringstream out;
  out << "# path,subject,activity,trial,modality\n";
  for (const auto& e : manifest.entries)
    out << e.path << "," << e.subject << "," << activity_name(e.activity) << "," << e.trial << ","
        << modality_name(e.modality) << "\n";
  io::write_file(path, out.str());
}

std::string resolve_path(const std::string& manifest_path, const std::string& entry_path) {
  std::filesystem::path p(entry_path);
  if (p.is_absolute()) return entry_path;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

}  // namespace mir::ingest
