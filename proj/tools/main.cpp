#include "bprouter/cli.hpp"

int main(int argc, char** argv) { return bprouter::run_cli(argc, argv); }
