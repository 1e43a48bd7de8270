#include "popalign/common/kv_config.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "popalign/common/error.h"

namespace popalign {
namespace {

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> SplitCommas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = Trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

double ParseDouble(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
  }
}

std::int64_t ParseInt(const std::string& key, const std::string& text) {
  std::int64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::Parse(const std::string& text) {
  KeyValueConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string trimmed = Trim(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = Trim(trimmed.substr(0, eq));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    }
    cfg.entries_[key] = Trim(trimmed.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::Load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return Parse(buffer.str());
}

bool KeyValueConfig::Has(const std::string& key) const { return entries_.count(key) > 0; }

void KeyValueConfig::Set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

std::optional<std::string> KeyValueConfig::Find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string KeyValueConfig::GetString(const std::string& key, const std::string& fallback) const {
  return Find(key).value_or(fallback);
}

std::string KeyValueConfig::RequireString(const std::string& key) const {
  auto v = Find(key);
  if (!v || v->empty()) throw ConfigError("missing required config key '" + key + "'");
  return *v;
}

std::int64_t KeyValueConfig::GetInt(const std::string& key, std::int64_t fallback) const {
  const auto v = Find(key);
  return v ? ParseInt(key, *v) : fallback;
}

double KeyValueConfig::GetDouble(const std::string& key, double fallback) const {
  const auto v = Find(key);
  return v ? ParseDouble(key, *v) : fallback;
}

bool KeyValueConfig::GetBool(const std::string& key, bool fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes") return true;
  if (*v == "false" || *v == "0" || *v == "no") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + *v + "'");
}

std::vector<double> KeyValueConfig::GetDoubleList(const std::string& key,
                                                  const std::vector<double>& fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  std::vector<double> out;
  for (const auto& part : SplitCommas(*v)) out.push_back(ParseDouble(key, part));
  return out;
}

std::vector<std::int64_t> KeyValueConfig::GetIntList(
    const std::string& key, const std::vector<std::int64_t>& fallback) const {
  const auto v = Find(key);
  if (!v) return fallback;
  std::vector<std::int64_t> out;
  for (const auto& part : SplitCommas(*v)) out.push_back(ParseInt(key, part));
  return out;
}

std::string KeyValueConfig::ToString() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

std::string KeyValueConfig::Hash() const { return Fnv1aHex(ToString()); }

std::string Fnv1aHex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace popalign
