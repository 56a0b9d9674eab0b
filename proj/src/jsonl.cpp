#include "screenlm/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "screenlm/errors.hpp"

namespace screenlm::jsonl {

namespace {

bool is_blank(const std::string& s) {
    for (char c : s) {
        if (c != ' ' && c != '\t' && c != '\r') return false;
    }
    return true;
}

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
    throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

} // namespace

void for_each(const std::filesystem::path& path,
              const std::function<void(std::size_t, const ordered_json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (is_blank(line)) continue;
        ordered_json obj;
        try {
            obj = ordered_json::parse(line);
        } catch (const ordered_json::parse_error& e) {
            fail(path, lineno, std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) fail(path, lineno, "expected a JSON object");
        fn(lineno, obj);
    }
}

std::string require_string(const ordered_json& obj, const char* field,
                           const std::filesystem::path& path, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end() || !it->is_string())
        fail(path, line, std::string("missing or non-string field \"") + field + "\"");
    return it->get<std::string>();
}

std::string optional_string(const ordered_json& obj, const char* field,
                            const std::filesystem::path& path, std::size_t line,
                            const std::string& fallback) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) return fallback;
    if (!it->is_string()) fail(path, line, std::string("field \"") + field + "\" must be a string");
    return it->get<std::string>();
}

bool optional_bool(const ordered_json& obj, const char* field,
                   const std::filesystem::path& path, std::size_t line, bool fallback) {
    auto it = obj.find(field);
    if (it == obj.end() || it->is_null()) return fallback;
    if (!it->is_boolean()) fail(path, line, std::string("field \"") + field + "\" must be a boolean");
    return it->get<bool>();
}

void write_file_atomic(const std::filesystem::path& file, const std::string& content) {
    const std::filesystem::path tmp = file.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ValidationError("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw ValidationError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, file);
}

std::string read_file(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ParseError("cannot open " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace screenlm::jsonl
