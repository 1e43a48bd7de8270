#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

namespace popalign {

// Binary artifact layout shared by checkpoints and steering artifacts:
//
//   magic    8 bytes  "POPALGN1"
//   version  u32 LE
//   hlen     u32 LE   length of the JSON header
//   header   hlen bytes of UTF-8 JSON: {kind, meta, tensors:[{name,rows,cols,offset}]}
//   payload  f32 LE values, tensors concatenated row-major; offset counts floats
//   crc      u32 LE   zlib crc32 of the payload bytes
inline constexpr std::uint32_t kContainerVersion = 1;

struct NamedTensor {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::vector<float> data;  // row-major, rows * cols
};

struct Container {
  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor& Get(const std::string& name) const;
  bool Contains(const std::string& name) const;
};

void WriteContainer(const std::string& path, const Container& container);
// Throws FormatError on bad magic, version mismatch, truncation or checksum failure.
Container ReadContainer(const std::string& path);

}  // namespace popalign
