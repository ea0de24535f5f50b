#pragma once

// LFSA binary embedding files:
//   magic "LFSA" | u32 version (1) | u32 dim | u64 count |
//   count * dim little-endian float32, row-major.
// A companion TSV maps row numbers to user/persona ids.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fairlab/nn.hpp"

namespace fairlab {

inline constexpr std::uint32_t kLfsaVersion = 1;

void write_lfsa(const std::filesystem::path& path, const Matrix& rows);
// Flat parameter vector stored as a single row.
void write_lfsa(const std::filesystem::path& path, std::span<const double> flat);
Matrix read_lfsa(const std::filesystem::path& path);
std::vector<double> read_lfsa_flat(const std::filesystem::path& path);

// row<TAB>id
void write_lfsa_index(const std::filesystem::path& path,
                      std::span<const std::string> ids);
std::vector<std::string> read_lfsa_index(const std::filesystem::path& path);

// Rounds every value through float32, matching what a write/read cycle does.
void round_to_float(std::span<double> values);

// Hex FNV-1a-64 of the file bytes; empty string if the file is missing.
std::string file_digest(const std::filesystem::path& path);

}  // namespace fairlab
