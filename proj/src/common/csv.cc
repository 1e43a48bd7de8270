#include "popalign/common/csv.h"

#include <cmath>
#include <cstdio>

#include "popalign/common/error.h"

namespace popalign {

std::string FormatNumber(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  // Try increasing precision until the value round-trips.
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof(buf), "%.*g", precision, value);
    if (std::strtod(buf, nullptr) == value) break;
  }
  return buf;
}

namespace {

void WriteLine(std::ofstream& out, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out << ',';
    out << cells[i];
  }
  out << '\n';
}

}  // namespace

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc) {
  if (!out_) throw DataError("cannot open '" + path + "' for writing");
  WriteLine(out_, header);
}

void CsvWriter::Row(const std::vector<std::string>& cells) { WriteLine(out_, cells); }

void CsvWriter::WriteWithPreamble(const std::string& path,
                                  const std::vector<std::string>& preamble,
                                  const std::vector<std::string>& header,
                                  const std::vector<std::vector<std::string>>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  for (const auto& line : preamble) out << "# " << line << '\n';
  WriteLine(out, header);
  for (const auto& row : rows) WriteLine(out, row);
  if (!out) throw DataError("write failed for '" + path + "'");
}

}  // namespace popalign
