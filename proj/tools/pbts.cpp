#include <iostream>

#include "pbts/cli.hpp"

int main(int argc, char** argv) {
  return pbts::cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
