#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace canon_hjb {

inline constexpr const char* kVersion = "0.1.0";

/// Exit codes: 0 success / CERTIFIED, 1 NOT_CERTIFIED or a check beyond
/// tolerance, 2 input error, 3 numerical failure. args excludes argv[0].
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace canon_hjb
