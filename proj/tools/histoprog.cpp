#include <iostream>

#include "histoprog/cli/cli.hpp"

int main(int argc, char** argv) { return histoprog::cli::run(argc, argv, std::cout, std::cerr); }
