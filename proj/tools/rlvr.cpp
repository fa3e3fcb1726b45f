#include "rlvr/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return rlvr::run_cli(argc, argv, std::cout, std::cerr); }
