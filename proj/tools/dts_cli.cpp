#include "dts/cli.hpp"

int main(int argc, char** argv) { return dts::cli::main(argc, argv); }
