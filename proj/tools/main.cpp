#include "ncs/cli.hpp"

int main(int argc, char** argv) { return ncs::run_cli(argc, argv); }
