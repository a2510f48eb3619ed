#include "cpga/cli.hpp"

int main(int argc, char** argv) { return cpga::cli::run_cli(argc, argv); }
