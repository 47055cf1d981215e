#include <iostream>

#include "factgen/cli.hpp"

int main(int argc, char** argv) { return factgen::cli::dispatch(argc, argv, std::cout, std::cerr); }
