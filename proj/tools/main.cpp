#include <iostream>

#include "edif/cli.hpp"

int main(int argc, char** argv) {
  return edif::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
