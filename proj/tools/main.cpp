#include <iostream>

#include "entbal/cli.hpp"

int main(int argc, char** argv) { return entbal::run_cli(argc, argv, std::cout, std::cerr); }
