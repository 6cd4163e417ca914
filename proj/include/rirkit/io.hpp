#pragma once

// File formats: the RIR archive, WAV (PCM16 / float32) and CSV tables.
//
// RIR archive, all fields little-endian:
//   offset 0   char[8]  magic "RIRARCH1"
//   offset 8   u32      version (1)
//   offset 12  u32      sample rate
//   offset 16  u32      K (samples per RIR)
//   offset 20  u32      N (microphones)
//   offset 24  f64[3]   source position
//   offset 48  f64[3N]  microphone positions, x y z per mic
//   then       f32[K*N] impulse responses, column-major (mic 0 first)

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "rirkit/core.hpp"
#include "rirkit/roomsim.hpp"

namespace rirkit {

static_assert(std::endian::native == std::endian::little, "binary I/O assumes a little-endian host");

class FormatError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InvalidInput("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write failed for '" + path + "'");
}

template <class T>
void put(std::vector<unsigned char>& b, T v) {
  unsigned char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  b.insert(b.end(), raw, raw + sizeof(T));
}

template <class T>
T get(const std::vector<unsigned char>& b, std::size_t off) {
  T v;
  std::memcpy(&v, b.data() + off, sizeof(T));
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------- archive

inline constexpr char kArchiveMagic[8] = {'R', 'I', 'R', 'A', 'R', 'C', 'H', '1'};
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::size_t kArchiveFixedHeader = 48;

struct RirArchive {
  RirMatrix rirs;
  std::vector<Point3> mic_positions;
  Point3 source_position = Point3::Zero();

  static std::size_t header_bytes(int n) { return kArchiveFixedHeader + 24 * static_cast<std::size_t>(n); }
  static std::size_t payload_bytes(int k, int n) { return 4 * static_cast<std::size_t>(k) * static_cast<std::size_t>(n); }
};

inline std::vector<unsigned char> encode_rir_archive(const RirArchive& a) {
  a.rirs.validate();
  const int k = a.rirs.samples(), n = a.rirs.mics();
  if (static_cast<int>(a.mic_positions.size()) != n)
    throw InvalidInput("export_rir_archive: " + std::to_string(a.mic_positions.size()) + " positions for " +
                       std::to_string(n) + " microphones");
  std::vector<unsigned char> b;
  b.reserve(RirArchive::header_bytes(n) + RirArchive::payload_bytes(k, n));
  b.insert(b.end(), kArchiveMagic, kArchiveMagic + 8);
  detail::put<std::uint32_t>(b, kArchiveVersion);
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(a.rirs.sample_rate));
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(k));
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(n));
  for (int i = 0; i < 3; ++i) detail::put<double>(b, a.source_position[i]);
  for (const auto& p : a.mic_positions)
    for (int i = 0; i < 3; ++i) detail::put<double>(b, p[i]);
  for (int m = 0; m < n; ++m)
    for (int t = 0; t < k; ++t) detail::put<float>(b, static_cast<float>(a.rirs.data(t, m)));
  return b;
}

inline RirArchive decode_rir_archive(const std::vector<unsigned char>& b, const std::string& name = "<archive>") {
  auto fail = [&](const std::string& what, std::size_t off) -> FormatError {
    return FormatError("RIR archive '" + name + "': " + what + " at byte offset " + std::to_string(off));
  };
  if (b.size() < kArchiveFixedHeader)
    throw fail("file holds " + std::to_string(b.size()) + " bytes, fixed header needs " +
                   std::to_string(kArchiveFixedHeader),
               b.size());
  if (!std::equal(kArchiveMagic, kArchiveMagic + 8, b.begin())) throw fail("bad magic", 0);
  const auto version = detail::get<std::uint32_t>(b, 8);
  if (version != kArchiveVersion) throw fail("unsupported version " + std::to_string(version), 8);
  const auto fs = detail::get<std::uint32_t>(b, 12);
  const auto k = detail::get<std::uint32_t>(b, 16);
  const auto n = detail::get<std::uint32_t>(b, 20);
  if (fs == 0 || fs > 10'000'000) throw fail("invalid sample rate " + std::to_string(fs), 12);
  if (k == 0 || k > 100'000'000) throw fail("invalid K " + std::to_string(k), 16);
  if (n == 0 || n > 1'000'000) throw fail("invalid N " + std::to_string(n), 20);
  const std::size_t header = RirArchive::header_bytes(static_cast<int>(n));
  const std::size_t payload = RirArchive::payload_bytes(static_cast<int>(k), static_cast<int>(n));
  if (b.size() < header)
    throw fail("truncated position table: expected " + std::to_string(header) + " header bytes, got " +
                   std::to_string(b.size()),
               b.size());
  if (b.size() != header + payload)
    throw fail("payload holds " + std::to_string(b.size() - header) + " bytes, expected " + std::to_string(payload) +
                   " (4*K*N)",
               header);

  RirArchive a;
  for (int i = 0; i < 3; ++i) a.source_position[i] = detail::get<double>(b, 24 + 8 * i);
  a.mic_positions.resize(n);
  for (std::uint32_t m = 0; m < n; ++m)
    for (int i = 0; i < 3; ++i) a.mic_positions[m][i] = detail::get<double>(b, kArchiveFixedHeader + 24 * m + 8 * i);
  Matrix data(k, n);
  std::size_t off = header;
  for (std::uint32_t m = 0; m < n; ++m)
    for (std::uint32_t t = 0; t < k; ++t, off += 4) {
      const float v = detail::get<float>(b, off);
      if (!std::isfinite(v)) throw fail("non-finite sample", off);
      data(t, m) = v;
    }
  a.rirs = RirMatrix(std::move(data), static_cast<int>(fs));
  return a;
}

inline void export_rir_archive(const std::string& path, const RirArchive& a) {
  detail::write_file(path, encode_rir_archive(a));
}

inline RirArchive import_rir_archive(const std::string& path) { return decode_rir_archive(detail::read_file(path), path); }

// ---------------------------------------------------------------- WAV

enum class WavFormat { pcm16, float32 };

struct WavData {
  Matrix samples;  // frames x channels, nominal range [-1, 1]
  int sample_rate = 8000;
  WavFormat format = WavFormat::float32;
};

// PCM16 clips to [-1, 1]; float32 stores values as given.
inline void write_wav(const std::string& path, const Matrix& samples, int fs, WavFormat fmt = WavFormat::float32) {
  if (samples.cols() < 1 || samples.cols() > 65535) throw InvalidInput("write_wav: channel count out of range");
  if (fs <= 0) throw InvalidInput("write_wav: sample rate must be positive");
  if (!samples.allFinite()) throw InvalidInput("write_wav: non-finite samples");
  const auto ch = static_cast<std::uint16_t>(samples.cols());
  const std::uint16_t bits = fmt == WavFormat::pcm16 ? 16 : 32;
  const std::uint32_t block = ch * bits / 8;
  const std::uint64_t data_bytes = static_cast<std::uint64_t>(samples.rows()) * block;
  if (data_bytes > 0xFFFFFFFFull - 36) throw InvalidInput("write_wav: too many samples for a RIFF file");
  std::vector<unsigned char> b;
  auto tag = [&](const char* s) { b.insert(b.end(), s, s + 4); };
  tag("RIFF");
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(36 + data_bytes));
  tag("WAVE");
  tag("fmt ");
  detail::put<std::uint32_t>(b, 16);
  detail::put<std::uint16_t>(b, fmt == WavFormat::pcm16 ? 1 : 3);
  detail::put<std::uint16_t>(b, ch);
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(fs));
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(fs) * block);
  detail::put<std::uint16_t>(b, static_cast<std::uint16_t>(block));
  detail::put<std::uint16_t>(b, bits);
  tag("data");
  detail::put<std::uint32_t>(b, static_cast<std::uint32_t>(data_bytes));
  for (Eigen::Index t = 0; t < samples.rows(); ++t)
    for (Eigen::Index c = 0; c < samples.cols(); ++c) {
      const double v = samples(t, c);
      if (fmt == WavFormat::pcm16)
        detail::put<std::int16_t>(b, static_cast<std::int16_t>(std::lround(std::clamp(v, -1.0, 1.0) * 32767.0)));
      else
        detail::put<float>(b, static_cast<float>(v));
    }
  detail::write_file(path, b);
}

inline void write_wav(const std::string& path, std::span<const double> mono, int fs, WavFormat fmt = WavFormat::float32) {
  write_wav(path, Eigen::Map<const Matrix>(mono.data(), static_cast<Eigen::Index>(mono.size()), 1), fs, fmt);
}

inline WavData read_wav(const std::string& path) {
  const auto b = detail::read_file(path);
  auto fail = [&](const std::string& what, std::size_t off) -> FormatError {
    return FormatError("WAV '" + path + "': " + what + " at byte offset " + std::to_string(off));
  };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw fail("not a RIFF/WAVE file", 0);
  std::size_t off = 12;
  std::uint16_t fmt_tag = 0, ch = 0, bits = 0;
  std::uint32_t fs = 0;
  bool have_fmt = false;
  while (off + 8 <= b.size()) {
    const std::string id(reinterpret_cast<const char*>(b.data() + off), 4);
    const auto size = detail::get<std::uint32_t>(b, off + 4);
    const std::size_t body = off + 8;
    if (body + size > b.size()) throw fail("chunk '" + id + "' overruns the file", off);
    if (id == "fmt ") {
      if (size < 16) throw fail("fmt chunk too short", off);
      fmt_tag = detail::get<std::uint16_t>(b, body);
      ch = detail::get<std::uint16_t>(b, body + 2);
      fs = detail::get<std::uint32_t>(b, body + 4);
      bits = detail::get<std::uint16_t>(b, body + 14);
      if (fmt_tag == 0xFFFE && size >= 26) fmt_tag = detail::get<std::uint16_t>(b, body + 24);  // extensible subformat
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw fail("data chunk before fmt chunk", off);
      if (ch == 0 || fs == 0) throw fail("invalid channel count or sample rate", off);
      WavData w;
      w.sample_rate = static_cast<int>(fs);
      if (fmt_tag == 1 && bits == 16)
        w.format = WavFormat::pcm16;
      else if (fmt_tag == 3 && bits == 32)
        w.format = WavFormat::float32;
      else
        throw fail("unsupported encoding (format " + std::to_string(fmt_tag) + ", " + std::to_string(bits) + " bits)",
                   off);
      const std::size_t block = static_cast<std::size_t>(ch) * bits / 8;
      const std::size_t frames = size / block;
      w.samples.resize(static_cast<Eigen::Index>(frames), ch);
      std::size_t p = body;
      for (std::size_t t = 0; t < frames; ++t)
        for (int c = 0; c < ch; ++c) {
          if (w.format == WavFormat::pcm16) {
            w.samples(static_cast<Eigen::Index>(t), c) = detail::get<std::int16_t>(b, p) / 32767.0;
            p += 2;
          } else {
            w.samples(static_cast<Eigen::Index>(t), c) = detail::get<float>(b, p);
            p += 4;
          }
        }
      return w;
    }
    off = body + size + (size & 1u);
  }
  throw fail("no data chunk", off);
}

// ---------------------------------------------------------------- CSV

inline std::string format_number(double v, int precision = 6) {
  if (std::isnan(v)) return "";
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::fixed << std::setprecision(precision) << v;
  std::string s = os.str();
  if (s == "-0." + std::string(precision, '0')) s.erase(0, 1);
  return s;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add(std::vector<std::string> row) {
    if (row.size() != header.size()) throw InvalidInput("CsvTable: row width differs from header");
    rows.push_back(std::move(row));
  }

  void sort_rows() { std::sort(rows.begin(), rows.end()); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }

  void write(const std::string& path) const {
    const std::string s = str();
    detail::write_file(path, std::vector<unsigned char>(s.begin(), s.end()));
  }

  // Plain comma splitting; the tables written here never quote.
  static CsvTable read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open CSV '" + path + "'");
    CsvTable t;
    std::string raw;
    bool first = true;
    while (std::getline(in, raw)) {
      if (!raw.empty() && raw.back() == '\r') raw.pop_back();
      if (raw.empty()) continue;
      std::vector<std::string> cells;
      std::stringstream ss(raw);
      std::string c;
      while (std::getline(ss, c, ',')) cells.push_back(c);
      if (raw.back() == ',') cells.emplace_back();
      if (first) {
        t.header = std::move(cells);
        first = false;
      } else {
        if (cells.size() != t.header.size())
          throw FormatError("CSV '" + path + "': row has " + std::to_string(cells.size()) + " cells, header has " +
                            std::to_string(t.header.size()));
        t.rows.push_back(std::move(cells));
      }
    }
    if (first) throw FormatError("CSV '" + path + "': empty file");
    return t;
  }

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw InvalidInput("CSV column '" + name + "' not found");
  }
};

}  // namespace rirkit
