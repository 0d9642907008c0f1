#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace dmcee::io {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

/// RFC 4180 subset: comma separated, optional double quotes, header row required.
CsvTable read_csv(const std::filesystem::path& path);

/// Shortest decimal representation that round-trips to the same double.
std::string format_double(double value);
/// Parses a full field as a double; no surrounding whitespace allowed.
bool parse_double(std::string_view text, double& out);

class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void row(const std::vector<std::string>& fields);

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

/// 64-bit FNV-1a of the file bytes, hex encoded. Used for manifest digests only.
std::string file_digest(const std::filesystem::path& path);

}  // namespace dmcee::io
