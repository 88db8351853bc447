#include "covfk/cli.hpp"

int main(int argc, char** argv) { return covfk::cli_main(argc, argv); }
