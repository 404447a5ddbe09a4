#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace v2xlab::csv {

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rectangular comma-separated table with a mandatory header row. Fields hold
/// their serialized text so that unknown columns survive a read/write cycle.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
  std::size_t require_column(std::string_view name) const;
  bool operator==(const Table&) const = default;
};

Table parse(std::string_view text, const std::string& source = "<memory>");
Table read_file(const std::filesystem::path& path);
std::string serialize(const Table& table);
void write_file(const std::filesystem::path& path, const Table& table);

std::vector<std::string_view> split(std::string_view line, char sep = ',');

double to_double(std::string_view field);
std::int64_t to_int(std::string_view field);

/// Fixed-precision decimal rendering (std::to_chars, no locale involvement).
std::string fixed(double value, int decimals);

}  // namespace v2xlab::csv
