#include "popalign/common/container.h"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>
#include <iterator>

#include "popalign/common/error.h"

namespace popalign {
namespace {

constexpr std::array<char, 8> kMagic = {'P', 'O', 'P', 'A', 'L', 'G', 'N', '1'};

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t GetU32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

const NamedTensor& Container::Get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t;
  }
  throw FormatError("artifact '" + kind + "' has no tensor named '" + name + "'");
}

bool Container::Contains(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void WriteContainer(const std::string& path, const Container& container) {
  nlohmann::json header;
  header["kind"] = container.kind;
  header["meta"] = container.meta;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  std::int64_t offset = 0;
  for (const auto& t : container.tensors) {
    if (static_cast<std::int64_t>(t.data.size()) != t.rows * t.cols) {
      throw FormatError("tensor '" + t.name + "' data size does not match its shape");
    }
    header["tensors"].push_back(
        {{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}, {"offset", offset}});
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof(bits));
      PutU32(payload, bits);
    }
    offset += t.rows * t.cols;
  }
  const std::string header_text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  PutU32(bytes, kContainerVersion);
  PutU32(bytes, static_cast<std::uint32_t>(header_text.size()));
  bytes += header_text;
  bytes += payload;
  const auto crc = crc32(0L, reinterpret_cast<const Bytef*>(payload.data()),
                         static_cast<uInt>(payload.size()));
  PutU32(bytes, static_cast<std::uint32_t>(crc));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for '" + path + "'");
}

Container ReadContainer(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());

  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw FormatError("'" + path + "' is not a popalign artifact (bad magic or truncated)");
  }
  const std::uint32_t version = GetU32(raw + 8);
  if (version != kContainerVersion) {
    throw FormatError("'" + path + "': unsupported format version " + std::to_string(version));
  }
  const std::uint32_t hlen = GetU32(raw + 12);
  if (bytes.size() < 16 + static_cast<std::size_t>(hlen) + 4) {
    throw FormatError("'" + path + "' is truncated (header)");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + hlen);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': corrupt header: " + e.what());
  }

  Container c;
  std::size_t total = 0;
  try {
    c.kind = header.at("kind").get<std::string>();
    c.meta = header.at("meta");
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      t.rows = entry.at("rows").get<std::int64_t>();
      t.cols = entry.at("cols").get<std::int64_t>();
      if (t.rows < 0 || t.cols < 0 ||
          entry.at("offset").get<std::int64_t>() != static_cast<std::int64_t>(total)) {
        throw FormatError("'" + path + "': corrupt tensor table");
      }
      total += static_cast<std::size_t>(t.rows * t.cols);
      c.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("'" + path + "': corrupt header: " + e.what());
  }

  const std::size_t payload_begin = 16 + hlen;
  const std::size_t payload_bytes = total * 4;
  if (bytes.size() != payload_begin + payload_bytes + 4) {
    throw FormatError("'" + path + "' is truncated or has trailing bytes");
  }
  const auto crc = crc32(0L, raw + payload_begin, static_cast<uInt>(payload_bytes));
  if (static_cast<std::uint32_t>(crc) != GetU32(raw + payload_begin + payload_bytes)) {
    throw FormatError("'" + path + "': payload checksum mismatch");
  }
  const unsigned char* p = raw + payload_begin;
  for (auto& t : c.tensors) {
    t.data.resize(static_cast<std::size_t>(t.rows * t.cols));
    for (auto& f : t.data) {
      const std::uint32_t bits = GetU32(p);
      std::memcpy(&f, &bits, sizeof(f));
      p += 4;
    }
  }
  return c;
}

}  // namespace popalign
