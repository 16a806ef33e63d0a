#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "survpfn/errors.hpp"

namespace survpfn::detail {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64(double v) { bytes(&v, 8); }
  void f64s(std::span<const double> v) {
    u64(v.size());
    bytes(v.data(), v.size() * 8);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  [[nodiscard]] const std::vector<unsigned char>& buffer() const noexcept { return buf_; }
  std::vector<unsigned char>& buffer() noexcept { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  ByteReader(std::span<const unsigned char> data, std::string what)
      : data_(data), what_(std::move(what)) {}

  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw DataError(what_ + ": truncated input");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::uint8_t u8() { return get<std::uint8_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::vector<double> f64s() {
    const std::uint64_t n = u64();
    if (n > (data_.size() - pos_) / 8) throw DataError(what_ + ": truncated array");
    std::vector<double> v(n);
    bytes(v.data(), n * 8);
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    if (n > data_.size() - pos_) throw DataError(what_ + ": truncated string");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }

  [[nodiscard]] std::size_t position() const noexcept { return pos_; }
  [[nodiscard]] bool done() const noexcept { return pos_ == data_.size(); }

 private:
  template <class T>
  T get() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }

  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const unsigned char> data);

}  // namespace survpfn::detail
