#include <iostream>

#include "deeptransport/cli.hpp"

int main(int argc, char** argv) { return deeptransport::cli::run(argc, argv, std::cout, std::cerr); }
