#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hermes::csv {

/// Splits one CSV record. Double-quoted fields may contain commas; "" escapes a quote.
std::vector<std::string> split_line(std::string_view line);

/// Strict decimal parse of the whole cell (surrounding blanks allowed).
std::optional<double> parse_double(std::string_view cell);

/// Shortest decimal text that parses back to exactly the same double.
std::string format_double(double value);

/// Quotes a field only when it needs it.
std::string quote(std::string_view field);

} // namespace hermes::csv
