#include "lmrasch/cli.hpp"

int main(int argc, char** argv) { return lmrasch::cli::run_command(argc, argv); }
