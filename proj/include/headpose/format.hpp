#pragma once

#include <string>
#include <string_view>

namespace headpose {

/// Shortest decimal text that parses back to exactly `value` ("0", "16.5", "1e-05").
std::string format_double(double value);

/// Strict full-string parse; returns false on trailing junk or overflow.
bool parse_double(std::string_view text, double& out);

}  // namespace headpose
