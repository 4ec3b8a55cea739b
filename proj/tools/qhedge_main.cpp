#include <iostream>

#include "qhedge/cli_runner.hpp"

int main(int argc, char** argv) { return qhedge::run_cli(argc, argv, std::cout, std::cerr); }
