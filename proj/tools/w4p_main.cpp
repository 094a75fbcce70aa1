#include <iostream>

#include "w4p/cli.hpp"

int main(int argc, char** argv) { return w4p::cli::run(argc, argv, std::cout, std::cerr); }
