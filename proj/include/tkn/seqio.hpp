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

// .tknseq: a batch of equally shaped frame sequences.
//
//   offset  size  field
//        0     4  magic "TKNS"
//        4     4  u32 version (1)
//        8     4  u32 dtype (1 = f64)
//       12     4  u32 reserved (0)
//       16     8  u64 sequence count
//       24     8  u64 frames per sequence
//       32     8  u64 channels
//       40     8  u64 height
//       48     8  u64 width
//       56     -  payload, little-endian, sequence-major [count, frames, C, H, W]

#ifndef TKN_SEQIO_HPP_
#define TKN_SEQIO_HPP_

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tkn/io.hpp"

namespace tkn {

inline constexpr char kSeqMagic[4] = {'T', 'K', 'N', 'S'};
inline constexpr std::uint32_t kSeqVersion = 1;
inline constexpr std::uint32_t kDtypeF64 = 1;

/// Each sequence is a [frames, C, H, W] tensor; all must share one shape.
inline Bytes encode_sequences(const std::vector<Tensor>& seqs) {
  if (seqs.empty()) throw Error("tknseq: no sequences to write");
  const Shape& s = seqs.front().shape();
  if (s.size() != 4) throw Error("tknseq: sequences must be [frames,C,H,W], got " + to_string(s));
  for (const Tensor& t : seqs) {
    if (t.shape() != s) throw Error("tknseq: mixed sequence shapes " + to_string(s) + " and " + to_string(t.shape()));
  }
  ByteWriter w;
  w.put_bytes(std::string_view(kSeqMagic, 4));
  w.put<std::uint32_t>(kSeqVersion);
  w.put<std::uint32_t>(kDtypeF64);
  w.put<std::uint32_t>(0);
  w.put<std::uint64_t>(seqs.size());
  for (std::size_t d : s) w.put<std::uint64_t>(d);
  for (const Tensor& t : seqs) w.put_doubles(t.raw(), t.size());
  return std::move(w.bytes());
}

inline std::vector<Tensor> decode_sequences(const Bytes& b, const std::string& what = "tknseq") {
  ByteReader r(b, what);
  if (r.get_bytes(4, "magic") != std::string(kSeqMagic, 4)) {
    r.seek(0);
    r.fail("bad magic (not a .tknseq file)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kSeqVersion) r.fail("unsupported version " + std::to_string(version));
  const auto dtype = r.get<std::uint32_t>("dtype");
  if (dtype != kDtypeF64) r.fail("unsupported dtype " + std::to_string(dtype));
  if (r.get<std::uint32_t>("reserved") != 0) r.fail("reserved field is not zero");
  const auto count = r.get<std::uint64_t>("sequence count");
  Shape s;
  for (const char* f : {"frames", "channels", "height", "width"}) {
    const auto d = r.get<std::uint64_t>(f);
    if (d == 0 || d > (1u << 24)) r.fail(std::string("implausible ") + f + " " + std::to_string(d));
    s.push_back(static_cast<std::size_t>(d));
  }
  if (count == 0 || count > (1u << 24)) r.fail("implausible sequence count " + std::to_string(count));
  const std::size_t per = element_count(s);
  const std::size_t need = count * per * sizeof(double);
  if (r.remaining() != need) {
    r.fail(std::string(r.remaining() < need ? "truncated payload" : "trailing bytes after payload") + ": expected " +
           std::to_string(need) + " bytes, found " + std::to_string(r.remaining()));
  }
  std::vector<Tensor> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Tensor t(s);
    r.get_doubles(t.raw(), per, "payload");
    out.push_back(std::move(t));
  }
  return out;
}

inline void save_sequences(const std::filesystem::path& path, const std::vector<Tensor>& seqs) {
  write_file_atomic(path, encode_sequences(seqs));
}

inline std::vector<Tensor> load_sequences(const std::filesystem::path& path) {
  return decode_sequences(read_file(path), path.string());
}

inline void save_sequence(const std::filesystem::path& path, const Tensor& seq) { save_sequences(path, {seq}); }

inline Tensor load_sequence(const std::filesystem::path& path) {
  auto v = load_sequences(path);
  if (v.size() != 1) throw Error(path.string() + ": expected one sequence, found " + std::to_string(v.size()));
  return std::move(v.front());
}

/// 8-bit binary PGM (one channel) or PPM (three channels) of a [C,H,W] frame.
inline void export_frame_pnm(const std::filesystem::path& path, const Tensor& frame) {
  if (frame.rank() != 3 || (frame.dim(0) != 1 && frame.dim(0) != 3)) {
    throw Error("export: expected a [1|3,H,W] frame, got " + to_string(frame.shape()));
  }
  const std::size_t c = frame.dim(0), h = frame.dim(1), w = frame.dim(2);
  std::string head = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  Bytes out(head.begin(), head.end());
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::clamp(frame[ch * h * w + i], 0.0, 1.0);
      out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
  }
  write_file_atomic(path, out);
}

}  // namespace tkn

#endif  // TKN_SEQIO_HPP_
