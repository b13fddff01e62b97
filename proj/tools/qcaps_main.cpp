#include <iostream>

#include "qcaps/cli.hpp"

int main(int argc, char** argv)
{
  return qcaps::cli::run(argc, argv, std::cout, std::cerr);
}
