#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "spotkit/errors.hpp"

namespace spotkit::bin {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void magic(std::string_view m) { bytes(m.data(), m.size()); }
  void u32(std::uint32_t v) { bytes(&v, sizeof v); }
  void f64(double v) { bytes(&v, sizeof v); }
  void f32(float v) { bytes(&v, sizeof v); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

// Bounds-checked cursor over an in-memory file; every overrun is a FormatError.
class Reader {
 public:
  Reader(std::vector<char> data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}

  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

  void bytes(void* p, std::size_t n) {
    if (n > remaining()) throw FormatError(what_ + ": truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  void expect_magic(std::string_view m) {
    std::string got(m.size(), '\0');
    if (m.size() > remaining()) throw FormatError(what_ + ": file too short for header");
    bytes(got.data(), got.size());
    if (got != m) throw FormatError(what_ + ": bad magic, expected " + std::string(m));
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, sizeof v);
    return v;
  }
  float f32() {
    float v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > remaining()) throw FormatError(what_ + ": truncated string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

 private:
  std::vector<char> data_;
  std::string what_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

// Writes via a temporary sibling and rename so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::vector<char>(text.begin(), text.end()));
}

}  // namespace spotkit::bin
