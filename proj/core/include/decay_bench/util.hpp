#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace decay_bench {

namespace fs = std::filesystem;
using Json = nlohmann::json;

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents.
std::string sha256_file(const fs::path& path);

/// Hash of a JSON value in canonical form (sorted keys, compact).
std::string json_hash(const Json& value);

/// First 16 hex characters of a hash, used in directory names.
inline std::string short_hash(const std::string& hex) { return hex.substr(0, 16); }

/// Write bytes to `path` atomically: write a sibling temp file, then rename.
void atomic_write(const fs::path& path, std::string_view bytes);
void atomic_write_json(const fs::path& path, const Json& value);

std::string read_file(const fs::path& path);
Json read_json(const fs::path& path);

/// A sibling path unique to this process and call, for temp-then-rename writes.
fs::path unique_temp_sibling(const fs::path& target);

/// round-half-up(fraction * n), clamped to [lo, hi].
std::size_t rounded_count(double fraction, std::size_t n, std::size_t lo, std::size_t hi);

}  // namespace decay_bench
