#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <memory>
#include <string>
#include <vector>

#include "popalign/common/error.h"
#include "popalign/corpus/corpus.h"

namespace popalign::corpus {
namespace {

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// gzread handles plain files transparently.
bool ReadLine(gzFile file, std::string& line) {
  line.clear();
  char buf[4096];
  while (gzgets(file, buf, sizeof(buf)) != nullptr) {
    line += buf;
    if (!line.empty() && line.back() == '\n') break;
  }
  if (line.empty()) return false;
  while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
  return true;
}

std::vector<std::string_view> SplitFields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
  }
  return fields;
}

std::int64_t ParseField(std::string_view text, const char* what, const std::string& path,
                        std::int64_t line_no) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    throw DataError(path + ":" + std::to_string(line_no) + ": " + what + " '" +
                    std::string(text) + "' is not an integer");
  }
  return v;
}

}  // namespace

InteractionLog LoadInteractions(const std::string& path, const ColumnSpec& columns) {
  GzHandle file(gzopen(path.c_str(), "rb"));
  if (!file) throw DataError("cannot open interaction file '" + path + "'");

  const int needed =
      std::max({columns.user_column, columns.item_column, columns.timestamp_column}) + 1;
  std::vector<Interaction> rows;
  std::string line;
  std::int64_t line_no = 0;
  while (ReadLine(file.get(), line)) {
    ++line_no;
    if (line_no == 1 && columns.has_header) continue;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = SplitFields(line, columns.delimiter);
    if (static_cast<int>(fields.size()) < needed) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected at least " +
                      std::to_string(needed) + " columns, found " +
                      std::to_string(fields.size()));
    }
    rows.push_back({ParseField(fields[columns.user_column], "user id", path, line_no),
                    ParseField(fields[columns.item_column], "item id", path, line_no),
                    ParseField(fields[columns.timestamp_column], "timestamp", path, line_no)});
  }
  int err = 0;
  gzerror(file.get(), &err);
  if (err != Z_OK && err != Z_BUF_ERROR) {
    throw DataError("read error in '" + path + "'");
  }
  if (rows.empty()) throw DataError("interaction file '" + path + "' contains no rows");
  return InteractionLog::FromInteractions(rows);
}

}  // namespace popalign::corpus
