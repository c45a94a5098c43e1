#include "cli.hpp"

int main(int argc, char** argv) { return edgecl::cli::run_cli(argc, argv); }
