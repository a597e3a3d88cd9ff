#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace visitrisk::io {

std::vector<std::string> split(std::string_view line, char delimiter);
std::string_view trim(std::string_view text);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

/// Strict numeric parses: the whole field must be consumed.
bool parse_int(std::string_view text, long long& out);
bool parse_double(std::string_view text, double& out);

void write_f64_le(std::ostream& out, std::span<const double> values);
/// Reads exactly values.size() doubles; false on short read.
bool read_f64_le(std::istream& in, std::span<double> values);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// FNV-1a 64 of a file's bytes, hex encoded. Used by the run log.
std::string file_digest(const std::filesystem::path& path);

}  // namespace visitrisk::io
