#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace matprobe {

/// Whole file as bytes; DataError when it cannot be opened.
[[nodiscard]] std::string read_file(const std::filesystem::path& path);
/// Writes to "<path>.tmp" and renames over `path`, so readers never see a
/// partial file. Creates missing parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// 64-bit FNV-1a; stable across platforms, used for content digests.
[[nodiscard]] constexpr std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
    for (const char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// 16 lowercase hex digits.
[[nodiscard]] std::string hex64(std::uint64_t v);

}  // namespace matprobe
