#include "upmt/text.hpp"

#include <charconv>

#include "upmt/error.hpp"

namespace upmt {

namespace {

template <typename T>
T parse_number(std::string_view text, const char* what) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (text.empty() || ec != std::errc{} || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::ParseError, std::string("invalid ") + what + " '" + std::string(text) + "'");
  }
  return value;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

int64_t parse_int(std::string_view text) { return parse_number<int64_t>(text, "integer"); }
uint64_t parse_uint(std::string_view text) { return parse_number<uint64_t>(text, "unsigned integer"); }
double parse_double(std::string_view text) { return parse_number<double>(text, "number"); }

std::string join_doubles(const std::vector<double>& values, char sep) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += sep;
    out += format_double(values[i]);
  }
  return out;
}

std::vector<double> split_doubles(std::string_view text, char sep) {
  std::vector<double> out;
  if (trim(text).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = text.find(sep, start);
    out.push_back(parse_double(trim(text.substr(start, end - start))));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

std::string_view trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return text.substr(first, last - first + 1);
}

}  // namespace upmt
