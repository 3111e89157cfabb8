#include "mistseg_cli/cli.hpp"

int main(int argc, char** argv) { return mistseg::cli::main_entry(argc, argv); }
