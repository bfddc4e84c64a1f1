#include <iostream>

#include "relaxseg/cli.hpp"

int main(int argc, char** argv) {
  return relaxseg::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
