#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace popalign {

// Declarative `key = value` configuration. Lines starting with '#' are
// comments; later assignments override earlier ones.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig Parse(const std::string& text);
  static KeyValueConfig Load(const std::string& path);

  bool Has(const std::string& key) const;
  void Set(const std::string& key, const std::string& value);

  std::string GetString(const std::string& key, const std::string& fallback) const;
  std::string RequireString(const std::string& key) const;
  std::int64_t GetInt(const std::string& key, std::int64_t fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  // Comma separated list, e.g. "0,1,2,4".
  std::vector<double> GetDoubleList(const std::string& key,
                                    const std::vector<double>& fallback) const;
  std::vector<std::int64_t> GetIntList(const std::string& key,
                                       const std::vector<std::int64_t>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

  // Canonical rendering: sorted `key = value` lines.
  std::string ToString() const;
  // FNV-1a over ToString(), as 16 hex digits.
  std::string Hash() const;

 private:
  std::optional<std::string> Find(const std::string& key) const;

  std::map<std::string, std::string> entries_;
};

std::string Fnv1aHex(const std::string& bytes);

}  // namespace popalign
