#include <iostream>

#include "dehaze/cli.hpp"

int main(int argc, char** argv) {
  return dehaze::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
