#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace sieve {

/// Writes to a sibling temp file, fsyncs and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

std::string_view trim(std::string_view s) noexcept;

/// ISO-8601 UTC with second resolution, e.g. 2025-01-31T12:00:00Z.
std::string utc_timestamp_now();

}  // namespace sieve
