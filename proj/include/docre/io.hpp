#pragma once

#include <string>

namespace docre {

std::string read_file_string(const std::string& path);

// Write via a sibling temp file then rename, so readers never observe a
// partially written file.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace docre
