#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace vts {

/// Little-endian encoder into a byte string.
class ByteWriter {
 public:
  void bytes(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  /// u32 length prefix, then the bytes.
  void str(std::string_view s);

  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

/// Little-endian decoder. Errors are FormatErrors naming `what` and the
/// byte offset at which decoding failed.
class ByteReader {
 public:
  ByteReader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::string_view bytes(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const;
  [[noreturn]] void fail_at(std::size_t offset, const std::string& msg) const;
  void expect_end() const;

 private:
  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Whole-file helpers; errors are DataErrors naming the path.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view bytes);

}  // namespace vts
