#include <iostream>

#include "caformer/cli.hpp"

int main(int argc, char** argv) { return caformer::cli::run(argc, argv, std::cout, std::cerr); }
