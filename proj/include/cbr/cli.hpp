#pragma once

#include <iosfwd>

namespace cbr {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUser = 1;
inline constexpr int kExitInternal = 2;

// Parses argv and runs one subcommand. Exit 0 on success, 1 on user
// error, 2 on internal error.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cbr
