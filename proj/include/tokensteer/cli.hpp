#pragma once

// Command-line front end. Exit codes: 0 ok, 2 validation error, 3 missing input.

#include <ostream>

namespace tokensteer {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitMissingInput = 3;

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace tokensteer
