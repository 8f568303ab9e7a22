#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "trojanlab/tensor.hpp"

namespace trojanlab {

enum class ContainerErrorKind { bad_magic, bad_version, bad_checksum, truncated };

class ContainerError : public std::runtime_error {
 public:
  ContainerError(ContainerErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ContainerErrorKind kind() const { return kind_; }

 private:
  ContainerErrorKind kind_;
};

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len);

// Versioned binary container: 4 magic bytes, u32 version, payload, trailing
// u64 FNV-1a checksum of the payload bytes. All integers little-endian.
void write_container(const std::string& path, const std::array<char, 4>& magic,
                     std::uint32_t version, const std::vector<std::uint8_t>& payload);
std::vector<std::uint8_t> read_container(const std::string& path,
                                         const std::array<char, 4>& magic,
                                         std::uint32_t expected_version);

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void str(const std::string& s);
  // Shape as u32s, then elements as little-endian 32-bit floats.
  void tensor_f32(const Tensor& t);
  // Same layout with full-precision 64-bit elements.
  void tensor_f64(const Tensor& t);
  const std::vector<std::uint8_t>& bytes() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();
  Tensor tensor_f32();
  Tensor tensor_f64();
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

// Writes to a temp file in the same directory, then renames into place.
void atomic_write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);
void atomic_write_text(const std::string& path, const std::string& text);

}  // namespace trojanlab
