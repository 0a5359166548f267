#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <ostream>
#include <string>
#include <system_error>
#include <vector>

namespace rank1sense {

/// Locale-independent decimal text with 17 significant digits, enough to
/// round-trip any double bit-exactly.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                           std::chars_format::general, 17);
  return std::string(buf.data(), res.ptr);
}

/// One CSV row from already formatted cells.
inline void write_csv_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

/// Configuration echo block: '#'-prefixed key=value lines ahead of the header
/// so every output file carries the resolved parameters for replay.
inline void write_echo_block(
    std::ostream& os,
    const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [key, value] : kv) os << "# " << key << '=' << value << '\n';
}

}  // namespace rank1sense
