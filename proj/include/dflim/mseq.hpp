#pragma once

// MSEQ binary matrix sequences and CSV frame directories.
//
// MSEQ layout: ASCII "DFLIMSEQ1", then p1, p2, n as little-endian u32, then
// n·p1·p2 little-endian f64 values, frame-major then row-major.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dflim/linalg.hpp"

namespace dflim {

inline constexpr char kMseqMagic[] = "DFLIMSEQ1";
inline constexpr std::size_t kMseqMagicLen = 9;
inline constexpr std::size_t kMseqHeaderLen = kMseqMagicLen + 12;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void put_f64(std::ostream& os, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(const unsigned char* b) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

struct MseqHeader {
  std::uint32_t p1 = 0;
  std::uint32_t p2 = 0;
  std::uint32_t n = 0;
};

/// Streaming MSEQ writer; the frame count is patched into the header on close.
class MseqWriter {
 public:
  MseqWriter(const std::filesystem::path& path, long p1, long p2) : path_(path), p1_(p1), p2_(p2) {
    if (p1 < 1 || p2 < 1) throw Error(ErrorKind::InvalidInput, "MSEQ frames need positive dims");
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "' for writing");
    out_.write(kMseqMagic, kMseqMagicLen);
    detail::put_u32(out_, static_cast<std::uint32_t>(p1));
    detail::put_u32(out_, static_cast<std::uint32_t>(p2));
    detail::put_u32(out_, 0);
  }
  MseqWriter(const MseqWriter&) = delete;
  MseqWriter& operator=(const MseqWriter&) = delete;
  ~MseqWriter() {
    try {
      close();
    } catch (...) {
    }
  }

  void write(const Matrix& frame) {
    if (frame.rows() != p1_ || frame.cols() != p2_) {
      throw Error(ErrorKind::InvalidInput, "frame " + std::to_string(n_ + 1) + " is " + std::to_string(frame.rows()) +
                                               "x" + std::to_string(frame.cols()) + ", file is " +
                                               std::to_string(p1_) + "x" + std::to_string(p2_));
    }
    for (long i = 0; i < p1_; ++i)
      for (long j = 0; j < p2_; ++j) detail::put_f64(out_, frame(i, j));
    ++n_;
  }

  void close() {
    if (!out_.is_open()) return;
    out_.seekp(static_cast<std::streamoff>(kMseqMagicLen + 8));
    detail::put_u32(out_, static_cast<std::uint32_t>(n_));
    out_.close();
    if (out_.fail()) throw Error(ErrorKind::IoError, "write to '" + path_.string() + "' failed");
  }

 private:
  std::filesystem::path path_;
  long p1_;
  long p2_;
  long n_ = 0;
  std::ofstream out_;
};

inline void write_mseq(const std::vector<Matrix>& frames, const std::filesystem::path& path) {
  if (frames.empty()) throw Error(ErrorKind::InvalidInput, "no frames to write");
  MseqWriter w(path, frames.front().rows(), frames.front().cols());
  for (const Matrix& f : frames) w.write(f);
  w.close();
}

/// Streaming MSEQ reader; validates the payload length up front.
class MseqReader {
 public:
  explicit MseqReader(const std::filesystem::path& path) : path_(path) {
    in_.open(path, std::ios::binary);
    if (!in_) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
    unsigned char head[kMseqHeaderLen];
    in_.read(reinterpret_cast<char*>(head), kMseqHeaderLen);
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got < kMseqMagicLen || std::memcmp(head, kMseqMagic, kMseqMagicLen) != 0) {
      std::size_t off = 0;
      while (off < std::min(got, kMseqMagicLen) && head[off] == static_cast<unsigned char>(kMseqMagic[off])) ++off;
      throw ParseError("'" + path.string() + "': bad magic, expected DFLIMSEQ1", off);
    }
    if (got < kMseqHeaderLen) {
      throw ParseError("'" + path.string() + "': header truncated, expected " + std::to_string(kMseqHeaderLen) +
                           " bytes, got " + std::to_string(got),
                       got);
    }
    header_ = {detail::get_u32(head + 9), detail::get_u32(head + 13), detail::get_u32(head + 17)};
    if (header_.p1 == 0 || header_.p2 == 0) throw ParseError("'" + path.string() + "': zero frame dimension", 9);
    const std::uintmax_t size = std::filesystem::file_size(path);
    const std::uintmax_t expected =
        kMseqHeaderLen + 8ull * header_.n * static_cast<std::uintmax_t>(header_.p1) * header_.p2;
    if (size != expected) {
      throw ParseError("'" + path.string() + "': payload length mismatch, expected " + std::to_string(expected) +
                           " bytes in total, got " + std::to_string(size),
                       static_cast<std::size_t>(std::min(size, expected)));
    }
    buf_.resize(8ull * header_.p1 * header_.p2);
  }

  const MseqHeader& header() const { return header_; }

  std::optional<Matrix> next() {
    if (read_ >= header_.n) return std::nullopt;
    const std::size_t offset = kMseqHeaderLen + buf_.size() * read_;
    in_.read(reinterpret_cast<char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (static_cast<std::size_t>(in_.gcount()) != buf_.size()) {
      throw ParseError("'" + path_.string() + "': frame " + std::to_string(read_ + 1) + " truncated",
                       offset + static_cast<std::size_t>(in_.gcount()));
    }
    Matrix m(header_.p1, header_.p2);
    const unsigned char* p = buf_.data();
    for (long i = 0; i < m.rows(); ++i)
      for (long j = 0; j < m.cols(); ++j, p += 8) m(i, j) = detail::get_f64(p);
    ++read_;
    return m;
  }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  MseqHeader header_;
  std::vector<unsigned char> buf_;
  std::uint32_t read_ = 0;
};

inline std::vector<Matrix> read_mseq(const std::filesystem::path& path) {
  MseqReader r(path);
  std::vector<Matrix> frames;
  frames.reserve(r.header().n);
  while (auto f = r.next()) frames.push_back(std::move(*f));
  return frames;
}

// ---- CSV frame directories ---------------------------------------------------------

/// Reads one numeric CSV frame; every row must have the same number of cells.
inline Matrix read_csv_frame(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<double> values;
  long cols = -1;
  long rows = 0;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    long count = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      const std::string cell = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
      if (cell.empty() || used != cell.size()) {
        throw ParseError("'" + path.filename().string() + "' row " + std::to_string(rows) + ": non-numeric cell '" +
                             cell + "'",
                         line_start + pos);
      }
      values.push_back(v);
      ++count;
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (cols < 0) cols = count;
    if (count != cols) {
      throw ParseError("'" + path.filename().string() + "' row " + std::to_string(rows) + ": " +
                           std::to_string(count) + " cells, expected " + std::to_string(cols),
                       line_start);
    }
  }
  if (rows == 0) throw ParseError("'" + path.filename().string() + "': empty frame", 0);
  Matrix m = make_matrix(rows, cols, values);
  require_finite(m, "'" + path.filename().string() + "'");
  return m;
}

/// All *.csv files of a directory in lexicographic order, one frame each.
inline std::vector<Matrix> read_csv_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::IoError, "'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw Error(ErrorKind::IoError, "no .csv frames in '" + dir.string() + "'");
  std::vector<Matrix> frames;
  for (const auto& f : files) {
    frames.push_back(read_csv_frame(f));
    if (frames.back().rows() != frames.front().rows() || frames.back().cols() != frames.front().cols()) {
      throw ParseError("'" + f.filename().string() + "': frame dims differ from the first frame", 0);
    }
  }
  return frames;
}

/// Writes frame_000001.csv, ... with full round-trip precision.
inline void write_csv_dir(const std::vector<Matrix>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06zu.csv", t + 1);
    std::ofstream out(dir / name);
    if (!out) throw Error(ErrorKind::IoError, "cannot write '" + (dir / name).string() + "'");
    out.precision(17);
    for (long i = 0; i < frames[t].rows(); ++i) {
      for (long j = 0; j < frames[t].cols(); ++j) out << (j ? "," : "") << frames[t](i, j);
      out << '\n';
    }
  }
}

}  // namespace dflim
