#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return wurstkit::cli::run(argc, argv, std::cout, std::cerr); }
