#pragma once

#include <iosfwd>

namespace rcnn::cli {

// Parses argv, runs one subcommand and returns the exit code: 0 success,
// 1 usage or configuration error, 2 data error, 3 numeric failure.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace rcnn::cli
