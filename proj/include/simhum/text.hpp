#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace simhum {

// Shortest representation that parses back to the same double.
std::string format_double(double v);

double parse_double(std::string_view text, std::string_view field);
int parse_int(std::string_view text, std::string_view field);
bool parse_bool(std::string_view text, std::string_view field);

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

}  // namespace simhum
