#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <json.hpp>

namespace screenlm::jsonl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Invokes fn(line_number, parsed_object) for every non-blank line.
// Throws ParseError naming file and line on malformed JSON or a non-object line.
void for_each(const std::filesystem::path& path,
              const std::function<void(std::size_t, const ordered_json&)>& fn);

// Field accessors that raise ParseError with file:line context.
std::string require_string(const ordered_json& obj, const char* field,
                           const std::filesystem::path& path, std::size_t line);
std::string optional_string(const ordered_json& obj, const char* field,
                            const std::filesystem::path& path, std::size_t line,
                            const std::string& fallback = "");
bool optional_bool(const ordered_json& obj, const char* field,
                   const std::filesystem::path& path, std::size_t line, bool fallback = false);

// Writes `file` atomically: whole content to a sibling tmp file, then rename.
void write_file_atomic(const std::filesystem::path& file, const std::string& content);

std::string read_file(const std::filesystem::path& file);

} // namespace screenlm::jsonl
