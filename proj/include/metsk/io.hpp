#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace metsk {

// 17 significant digits, enough to round-trip every double.
std::string format_double(double value);

// Parses a complete decimal float; throws ValidationError naming `where`.
double parse_double(std::string_view text, const std::string& where);
long long parse_integer(std::string_view text, const std::string& where);
bool parse_bool(std::string_view text, const std::string& where);

std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename.
void write_file(const std::filesystem::path& path, const std::string& contents);

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; `#` starts a comment; blank lines ignored. Order kept,
/// so later duplicates override earlier ones when applied in sequence.
std::vector<KeyValue> read_key_values(const std::filesystem::path& path);

}  // namespace metsk
