#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace retforge::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { ok = 0, data_error = 1, usage_error = 2, numeric_failure = 3 };

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::string& path);

}  // namespace retforge::cli
