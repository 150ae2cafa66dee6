#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace rcd::io {

/// Writes to `<path>.tmp` and renames over `path`, creating parent dirs.
void write_atomic(const std::filesystem::path& path, std::string_view bytes);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a; stable across platforms, used for provenance hashes.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Shortest round-trip decimal form of a double ("%.17g").
std::string fmt_double(double v);

}  // namespace rcd::io
