#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace sevcon {

std::uint64_t splitmix64(std::uint64_t x);

/// Stable 64-bit FNV-1a of a string (std::hash is not stable across builds).
std::uint64_t fnv1a(std::string_view text);

/// Derives an independent seed for a named stream from a base seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

std::string hex64(std::uint64_t value);

/// Round-trippable decimal representation of a double.
std::string format_double(double value);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

/// Minimal CSV reader for the numeric tables this project writes.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace sevcon
