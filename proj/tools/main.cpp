#include <iostream>

#include "tokensteer/cli.hpp"

int main(int argc, char** argv) { return tokensteer::run_cli(argc, argv, std::cout, std::cerr); }
