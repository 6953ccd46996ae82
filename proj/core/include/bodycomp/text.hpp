#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bodycomp {

// Shortest decimal form that parses back to the same double (via to_chars).
std::string format_double(double value);

// Strict full-string parses; throw std::runtime_error on garbage.
double parse_double(std::string_view text, const std::string& context);
long parse_long(std::string_view text, const std::string& context);

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace bodycomp
