#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace malfuse::io {

std::ifstream open_input(const std::filesystem::path& path, bool binary = false);
std::ofstream open_output(const std::filesystem::path& path, bool binary = false);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char delim);
std::vector<std::string_view> split_whitespace(std::string_view s);

/// Shortest text that round-trips a double exactly.
std::string format_real(double value);
double parse_real(std::string_view s);
long long parse_int(std::string_view s);

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines);
std::vector<std::string> read_lines(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

inline constexpr std::uint64_t kFnvOffset = 14695981039346656037ULL;

/// FNV-1a, folding `bytes` into `h`.
inline void fnv1a(std::uint64_t& h, std::string_view bytes) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
}

}  // namespace malfuse::io
