#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace conceptbp::io {

std::string read_file(const std::filesystem::path& path);
/// Writes atomically enough for our purposes: parent directories are created.
void write_file(const std::filesystem::path& path, std::string_view bytes);

void append_le_doubles(std::string& out, std::span<const double> values);
std::vector<double> read_le_doubles(std::string_view bytes, std::size_t count);

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
double parse_double(std::string_view text);
std::uint64_t parse_u64(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view line);

}  // namespace conceptbp::io
