#pragma once

#include <iosfwd>

namespace rlvr {

// Exit codes: 0 success, 1 runtime failure (including failed checks),
// 2 usage or configuration error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rlvr
