#include "region_gain/cli.hpp"

int main(int argc, char** argv) { return region_gain::cli::main(argc, argv); }
