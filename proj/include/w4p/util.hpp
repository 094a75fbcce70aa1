#pragma once

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace w4p {

// Shortest text that reads back to the same double.
std::string format_double(double v);

// Throws ErrorKind::Config naming every key of `j` outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         std::string_view section);

// Writes to a sibling temporary file, fsyncs and renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
std::string read_file(const std::filesystem::path& path);

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

}  // namespace w4p
