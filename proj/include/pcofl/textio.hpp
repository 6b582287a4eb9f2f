#pragma once

// Small text helpers shared by the CSV, config, and manifest writers:
// round-trip-exact double formatting and strict field parsing.

#include <string>
#include <vector>

#include "pcofl/types.hpp"

namespace pcofl {

// %.17g — shortest form that round-trips an IEEE double exactly.
std::string format_double(Scalar v);

// Whole-string conversions; `context` names the field in the error.
Scalar parse_double(const std::string& s, const std::string& context);
long long parse_int(const std::string& s, const std::string& context);

std::vector<std::string> split(const std::string& line, char delim);
std::string trim(const std::string& s);

}  // namespace pcofl
