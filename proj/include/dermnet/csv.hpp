#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dermnet::csv {

/// Splits one CSV line. Handles double-quoted fields with "" escapes; does
/// not support newlines inside quoted fields.
std::vector<std::string> split_line(std::string_view line);

/// Quotes a field when it contains a comma, quote or whitespace at the ends.
std::string escape(std::string_view field);

std::string join(const std::vector<std::string>& fields);

/// Reads the next non-empty line (CR stripped). Returns false at end of input.
bool next_line(std::istream& in, std::string& line, std::size_t& line_no);

}  // namespace dermnet::csv
