#pragma once

#include <iosfwd>

namespace medrag::cli {

/// 0 on success, 1 on usage errors, 2 on runtime errors.
int run_cli(int argc, char** argv);
int run_cli(int argc, char** argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace medrag::cli
