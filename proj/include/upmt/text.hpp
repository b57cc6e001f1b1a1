/// @file
/// @brief Exact number formatting and strict parsing for the text formats.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace upmt {

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

/// Whole-string parses; throw ParseError on trailing junk or overflow.
int64_t parse_int(std::string_view text);
uint64_t parse_uint(std::string_view text);
double parse_double(std::string_view text);

std::string join_doubles(const std::vector<double>& values, char sep = ',');
std::vector<double> split_doubles(std::string_view text, char sep = ',');

std::string_view trim(std::string_view text);

}  // namespace upmt
