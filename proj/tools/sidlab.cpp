#include <iostream>

#include "sidlab/cli.hpp"

int main(int argc, char** argv) { return sidlab::cli::run(argc, argv, std::cout, std::cerr); }
