// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <string_view>

namespace memcorrupt::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, flushes, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

nlohmann::json read_json(const std::filesystem::path& path);

/// Pretty-printed with sorted keys and a trailing newline.
void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& value);

} // namespace memcorrupt::io
