#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace riskmpc {

/// Writes to a temporary file next to `path`, then renames it over `path`,
/// so readers never see a half-written file.  Creates missing folders.
void atomic_write(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

}  // namespace riskmpc
