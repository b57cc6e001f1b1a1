#include <iostream>
#include <string>
#include <vector>

#include "upmt/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return upmt::cli::run(args, std::cout, std::cerr);
}
