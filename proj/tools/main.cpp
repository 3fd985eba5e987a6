#include <iostream>

#include "cbr/cli.hpp"

int main(int argc, char** argv) { return cbr::cli_dispatch(argc, argv, std::cout, std::cerr); }
