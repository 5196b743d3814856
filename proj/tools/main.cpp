#include "cli.hpp"

int main(int argc, char** argv) { return textpix::cli::run_main(argc, argv); }
