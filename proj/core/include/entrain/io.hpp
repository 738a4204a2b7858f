#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace entrain {

std::string read_file(const std::filesystem::path& path);

// Writes via a sibling temp file and rename, so readers never observe a
// half-written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// 1-based line number containing byte `offset` of `text`.
std::size_t line_of_offset(std::string_view text, std::size_t offset);

}  // namespace entrain
