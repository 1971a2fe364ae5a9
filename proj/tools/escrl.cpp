#include <iostream>

#include "escrl/cli.hpp"

int main(int argc, char** argv) { return escrl::cli::run(argc, argv, std::cout, std::cerr); }
