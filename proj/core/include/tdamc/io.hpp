#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tdamc::io {

std::vector<std::string_view> split(std::string_view line, char sep);

// Reads a CSV stream whose first line must equal `header`; calls `row` with
// the fields of every following non-empty line and its 1-based line number.
void read_csv(std::istream& in, std::string_view header,
              const std::function<void(std::span<const std::string_view>, std::size_t)>& row);

std::int64_t parse_int(std::string_view field);
std::uint64_t parse_uint(std::string_view field);
double parse_double(std::string_view field);

// Shortest round-trip representation.
std::string format_double(double v);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary file and renames, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view contents);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace tdamc::io
