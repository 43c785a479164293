#include "mir/cli.hpp"

int main(int argc, char** argv) { return mir::cli::run_cli(argc, argv); }
