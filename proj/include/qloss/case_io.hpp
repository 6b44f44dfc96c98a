#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "qloss/grid_model.hpp"

namespace qloss {

/// Parses a JSON case file and validates the resulting network.
/// Throws ParseError (syntax, missing or mistyped fields) or ValidationError.
Network parse_case(std::string_view text);

/// Inverse of parse_case: parse_case(serialize_case(net)) == net.
std::string serialize_case(const Network& net);

Network load_case(const std::filesystem::path& path);
void save_case(const Network& net, const std::filesystem::path& path);

}  // namespace qloss
