#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace densforge {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file. Parent directories are created.
void write_file_atomic(const fs::path& path, std::string_view bytes);

void copy_file_atomic(const fs::path& from, const fs::path& to);

// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace densforge
