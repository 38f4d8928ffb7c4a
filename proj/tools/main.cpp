#include <iostream>

#include "mhf/cli.hpp"

int main(int argc, char** argv) { return mhf::run_cli(argc, argv, std::cout, std::cerr); }
