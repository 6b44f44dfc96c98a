#pragma once

#include <charconv>
#include <string>
#include <string_view>
#include <vector>

namespace qloss::csv {

/// Shortest decimal form that parses back to the same double.
inline std::string num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

/// Splits one CSV line on commas; no quoting support (none of our files need it).
std::vector<std::string> split(std::string_view line);

/// Strict full-field double parse; throws std::invalid_argument on junk.
double parse_double(std::string_view field);

}  // namespace qloss::csv
