#include <iostream>

#include "polyrecover/cli.hpp"

int main(int argc, char** argv) { return polyrecover::cli_dispatch(argc, argv, std::cout, std::cerr); }
