#include "madspace/text_io.hpp"

#include <charconv>
#include <cmath>

#include "madspace/errors.hpp"

namespace madspace::text_io {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view token) {
  double v = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw ParseError("not a number: '" + std::string(token) + "'");
  }
  return v;
}

long long parse_int(std::string_view token) {
  long long v = 0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), v);
  if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
    throw ParseError("not an integer: '" + std::string(token) + "'");
  }
  return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::vector<std::string_view> LineReader::next() {
  while (std::getline(in_, line_)) {
    ++line_no_;
    auto tokens = split_ws(line_);
    if (!tokens.empty()) return tokens;
  }
  fail("unexpected end of file");
}

std::vector<std::string_view> LineReader::expect(std::string_view keyword) {
  auto tokens = next();
  if (tokens.front() != keyword) {
    fail("expected '" + std::string(keyword) + "', found '" + std::string(tokens.front()) + "'");
  }
  return tokens;
}

std::string LineReader::value(std::string_view keyword) {
  const auto tokens = expect(keyword);
  if (tokens.size() != 2) fail("'" + std::string(keyword) + "' expects one value");
  return std::string(tokens[1]);
}

void LineReader::fail(const std::string& message) const {
  throw ParseError(source_ + ":" + std::to_string(line_no_) + ": " + message);
}

}  // namespace madspace::text_io
