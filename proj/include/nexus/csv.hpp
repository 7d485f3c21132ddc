#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace nexus::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column position of `name` in the header, or -1.
  long column(std::string_view name) const;
};

/// Parses RFC-4180 style comma-separated text (quoted fields, doubled quotes,
/// CRLF or LF). A leading UTF-8 BOM is dropped.
Table parse(std::string_view text);
Table read(const std::filesystem::path& path);

std::string quote(std::string_view field);
std::string join(const std::vector<std::string>& fields);

/// Shortest decimal representation that parses back to the same double.
std::string format(double value);

/// Strict double parse; returns false on anything but a full numeric token.
bool parse_double(std::string_view text, double& out);

/// Writes `content` to `path`, creating parent directories.
void write_file(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

}  // namespace nexus::csv
