#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace escrl::text {

// Lowercased runs of ASCII alphanumerics; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view s);

// Splits on '.', '!' or '?' followed by whitespace or end of input. Each
// sentence keeps its terminator and is trimmed of surrounding whitespace.
std::vector<std::string> split_sentences(std::string_view report);

// Case-folded with internal whitespace collapsed to single spaces.
std::string normalize(std::string_view s);

std::string trim(std::string_view s);
std::string capitalize(std::string_view s);

// Joins with a single space.
std::string join(const std::vector<std::string>& parts, std::string_view sep = " ");

}  // namespace escrl::text
