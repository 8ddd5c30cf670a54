#include "advdef/cli/commands.hpp"

int main(int argc, char** argv) { return advdef::cli::run_cli(argc, argv); }
