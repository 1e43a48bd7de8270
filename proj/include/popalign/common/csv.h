#pragma once

#include <fstream>
#include <initializer_list>
#include <string>
#include <vector>

namespace popalign {

// Shortest round-trippable rendering of a double ("%.17g" trimmed).
std::string FormatNumber(double value);

class CsvWriter {
 public:
  // Throws DataError when the file cannot be opened.
  CsvWriter(const std::string& path, const std::vector<std::string>& header);

  // Any leading comment lines ("# key=value") must be written before the header.
  static void WriteWithPreamble(const std::string& path, const std::vector<std::string>& preamble,
                                const std::vector<std::string>& header,
                                const std::vector<std::vector<std::string>>& rows);

  void Row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

}  // namespace popalign
