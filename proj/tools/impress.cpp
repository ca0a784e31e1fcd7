#include <iostream>

#include "impress/cli.hpp"

int main(int argc, char** argv) { return impress::cli::dispatch(argc, argv, std::cout, std::cerr); }
