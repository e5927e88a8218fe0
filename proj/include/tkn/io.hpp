// Copyright 2026 The tkn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// File helpers: atomic replace, advisory locks, little-endian byte codecs.

#ifndef TKN_IO_HPP_
#define TKN_IO_HPP_

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "tkn/tensor.hpp"

namespace tkn {

using Bytes = std::vector<unsigned char>;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
inline void write_file_atomic(const std::filesystem::path& path, const Bytes& data) {
  const auto tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw Error("write failed for '" + path.string() + "'");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot move '" + tmp + "' to '" + path.string() + "': " + ec.message());
  }
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, Bytes(text.begin(), text.end()));
}

/// Exclusive advisory lock on an existing file or directory, held for the
/// object's lifetime.
class FileLock {
 public:
  explicit FileLock(const std::filesystem::path& path) : path_(path.string()) {
    fd_ = ::open(path_.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw Error("cannot open '" + path_ + "' for locking: " + std::strerror(errno));
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw Error("cannot lock '" + path_ + "': " + std::strerror(errno));
    }
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }

 private:
  std::string path_;
  int fd_ = -1;
};

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_arithmetic_v<T>);
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    bytes_.insert(bytes_.end(), b, b + sizeof(T));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_doubles(const double* p, std::size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
      const auto* b = reinterpret_cast<const unsigned char*>(p);
      bytes_.insert(bytes_.end(), b, b + n * sizeof(double));
    } else {
      for (std::size_t i = 0; i < n; ++i) put(p[i]);
    }
  }
  std::size_t size() const noexcept { return bytes_.size(); }
  Bytes& bytes() noexcept { return bytes_; }

 private:
  Bytes bytes_;
};

/// Bounds-checked little-endian decoder; errors carry the byte offset.
class ByteReader {
 public:
  ByteReader(const Bytes& b, std::string what) : b_(b), what_(std::move(what)) {}

  template <typename T>
  T get(const char* field) {
    need(sizeof(T), field);
    unsigned char tmp[sizeof(T)];
    std::memcpy(tmp, b_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(tmp, tmp + sizeof(T));
    T v;
    std::memcpy(&v, tmp, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes(std::size_t n, const char* field) {
    need(n, field);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void get_doubles(double* out, std::size_t n, const char* field) {
    if (n > (b_.size() - pos_) / sizeof(double)) need(n * sizeof(double), field);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out, b_.data() + pos_, n * sizeof(double));
      pos_ += n * sizeof(double);
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = get<double>(field);
    }
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw Error(what_ + ": " + msg + " at byte offset " + std::to_string(pos_));
  }
  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return b_.size() - pos_; }
  void seek(std::size_t p) {
    if (p > b_.size()) fail("seek past end");
    pos_ = p;
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (n > b_.size() - pos_) {
      throw Error(what_ + ": truncated while reading " + field + " at byte offset " + std::to_string(pos_) +
                  " (need " + std::to_string(n) + " bytes, " + std::to_string(b_.size() - pos_) + " left)");
    }
  }

  const Bytes& b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace tkn

#endif  // TKN_IO_HPP_
