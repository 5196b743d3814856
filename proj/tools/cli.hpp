#pragma once

namespace textpix::cli {

/// Parses and executes one command line. Exit codes: 0 success, 1 usage
/// error, 2 data/config/io error, 3 numeric error.
int run_main(int argc, const char* const* argv);

}  // namespace textpix::cli
