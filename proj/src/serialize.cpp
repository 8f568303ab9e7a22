#include "trojanlab/serialize.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace trojanlab {

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t len) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}

void ByteWriter::f64(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  u64(bits);
}

void ByteWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::tensor_f32(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.shape().size()));
  for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) f32(static_cast<float>(v));
}

void ByteWriter::tensor_f64(const Tensor& t) {
  u32(static_cast<std::uint32_t>(t.shape().size()));
  for (auto d : t.shape()) u32(static_cast<std::uint32_t>(d));
  for (double v : t.data()) f64(v);
}

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > buf_.size())
    throw ContainerError(ContainerErrorKind::truncated,
                         "payload truncated at byte " + std::to_string(pos_));
}

std::uint8_t ByteReader::u8() {
  need(1);
  return buf_[pos_++];
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_++]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_++]) << (8 * i);
  return v;
}

float ByteReader::f32() {
  const std::uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

double ByteReader::f64() {
  const std::uint64_t bits = u64();
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  need(n);
  std::string s(buf_.begin() + pos_, buf_.begin() + pos_ + n);
  pos_ += n;
  return s;
}

Tensor ByteReader::tensor_f32() {
  const std::uint32_t rank = u32();
  std::vector<std::size_t> shape(rank);
  std::size_t total = 1;
  for (auto& d : shape) {
    d = u32();
    total *= d;
  }
  std::vector<double> data(rank == 0 ? 0 : total);
  for (auto& v : data) v = static_cast<double>(f32());
  return Tensor(std::move(shape), std::move(data));
}

Tensor ByteReader::tensor_f64() {
  const std::uint32_t rank = u32();
  std::vector<std::size_t> shape(rank);
  std::size_t total = 1;
  for (auto& d : shape) {
    d = u32();
    total *= d;
  }
  std::vector<double> data(rank == 0 ? 0 : total);
  for (auto& v : data) v = f64();
  return Tensor(std::move(shape), std::move(data));
}

void atomic_write_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
  }
  std::filesystem::rename(tmp, path);
}

void atomic_write_text(const std::string& path, const std::string& text) {
  atomic_write_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_container(const std::string& path, const std::array<char, 4>& magic,
                     std::uint32_t version, const std::vector<std::uint8_t>& payload) {
  ByteWriter w;
  for (char c : magic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(version);
  std::vector<std::uint8_t> bytes = w.take();
  bytes.insert(bytes.end(), payload.begin(), payload.end());
  ByteWriter tail;
  tail.u64(fnv1a64(payload.data(), payload.size()));
  const auto& t = tail.bytes();
  bytes.insert(bytes.end(), t.begin(), t.end());
  atomic_write_bytes(path, bytes);
}

std::vector<std::uint8_t> read_container(const std::string& path,
                                         const std::array<char, 4>& magic,
                                         std::uint32_t expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 16)
    throw ContainerError(ContainerErrorKind::truncated,
                         path + ": file too short (" + std::to_string(bytes.size()) + " bytes)");
  for (int i = 0; i < 4; ++i) {
    if (bytes[i] != static_cast<std::uint8_t>(magic[i]))
      throw ContainerError(ContainerErrorKind::bad_magic,
                           path + ": bad magic bytes, expected '" +
                               std::string(magic.begin(), magic.end()) + "'");
  }
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[4 + i]) << (8 * i);
  if (version != expected_version)
    throw ContainerError(ContainerErrorKind::bad_version,
                         path + ": format version " + std::to_string(version) +
                             ", expected " + std::to_string(expected_version));
  const std::size_t payload_len = bytes.size() - 16;
  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= static_cast<std::uint64_t>(bytes[8 + payload_len + i]) << (8 * i);
  const std::uint64_t computed = fnv1a64(bytes.data() + 8, payload_len);
  if (stored != computed) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "%s: checksum mismatch over payload bytes 8..%zu (stored %016llx, computed "
                  "%016llx)",
                  path.c_str(), 8 + payload_len,
                  static_cast<unsigned long long>(stored),
                  static_cast<unsigned long long>(computed));
    throw ContainerError(ContainerErrorKind::bad_checksum, buf);
  }
  return std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + 8 + payload_len);
}

}  // namespace trojanlab
