#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cpt::io {

/// Little-endian byte sink; flushed to disk in one write.
class ByteWriter {
 public:
  void magic(std::string_view four_cc);
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> values);

  const std::string& bytes() const noexcept { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::string buf_;
};

/// Little-endian byte source with bounds checks; throws cpt::Error on truncation.
class ByteReader {
 public:
  ByteReader(std::string bytes, std::string origin);
  static ByteReader load(const std::filesystem::path& path);

  void expect_magic(std::string_view four_cc);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  void f32s(std::span<float> out);

  std::size_t remaining() const noexcept { return buf_.size() - pos_; }
  void expect_end() const;

 private:
  void need(std::size_t n, const char* what) const;

  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// FNV-1a 64 over file bytes, hex-encoded; used for input digests in run manifests.
std::string file_digest(const std::filesystem::path& path);

}  // namespace cpt::io
