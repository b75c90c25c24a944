#include <iostream>

#include "ckd/cli.hpp"

int main(int argc, char** argv) { return ckd::cli::run(argc, argv, std::cout, std::cerr); }
