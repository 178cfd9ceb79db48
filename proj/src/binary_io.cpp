#include "cpt/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cpt/error.hpp"

namespace cpt::io {

void ByteWriter::magic(std::string_view four_cc) { buf_.append(four_cc.data(), 4); }

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

void ByteWriter::f32s(std::span<const float> values) {
  buf_.reserve(buf_.size() + 4 * values.size());
  for (float v : values) f32(v);
}

void ByteWriter::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open '{}' for writing", path.string());
  out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
  if (!out) fail("write failed for '{}'", path.string());
}

ByteReader::ByteReader(std::string bytes, std::string origin)
    : buf_(std::move(bytes)), origin_(std::move(origin)) {}

ByteReader ByteReader::load(const std::filesystem::path& path) {
  return ByteReader(read_text_file(path), path.string());
}

void ByteReader::need(std::size_t n, const char* what) const {
  if (remaining() < n) fail("{}: truncated file while reading {}", origin_, what);
}

void ByteReader::expect_magic(std::string_view four_cc) {
  need(4, "magic");
  if (std::string_view(buf_.data() + pos_, 4) != four_cc) {
    fail("{}: bad magic (expected '{}')", origin_, four_cc);
  }
  pos_ += 4;
}

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return static_cast<std::uint8_t>(buf_[pos_++]);
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8, "u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

void ByteReader::f32s(std::span<float> out) {
  need(4 * out.size(), "f32 block");
  for (auto& v : out) v = f32();
}

void ByteReader::expect_end() const {
  if (remaining() != 0) fail("{}: {} trailing bytes", origin_, remaining());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open '{}'", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("cannot open '{}' for writing", path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) fail("write failed for '{}'", path.string());
}

std::string file_digest(const std::filesystem::path& path) {
  const std::string bytes = read_text_file(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("fnv1a64:{:016x}", h);
}

}  // namespace cpt::io
