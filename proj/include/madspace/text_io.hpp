#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <vector>

namespace madspace::text_io {

/// Shortest decimal form that parses back to the identical double.
std::string format_double(double v);
double parse_double(std::string_view token);
long long parse_int(std::string_view token);

std::vector<std::string_view> split_ws(std::string_view line);

/// Line reader for the line-oriented checkpoint formats; errors carry file and line.
class LineReader {
 public:
  LineReader(std::istream& in, std::string_view source) : in_(in), source_(source) {}

  /// Next non-empty line split on whitespace. Throws ParseError at end of input.
  std::vector<std::string_view> next();
  /// Like next(), but also checks that the first token equals `keyword`.
  std::vector<std::string_view> expect(std::string_view keyword);
  /// Reads `keyword value` and returns the value token as a string.
  std::string value(std::string_view keyword);

  [[noreturn]] void fail(const std::string& message) const;
  std::string_view source() const { return source_; }
  int line_number() const { return line_no_; }

 private:
  std::istream& in_;
  std::string source_;
  std::string line_;
  int line_no_ = 0;
};

}  // namespace madspace::text_io
