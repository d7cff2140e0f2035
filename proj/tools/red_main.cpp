#include <iostream>
#include <string>
#include <vector>

#include "red/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return red::cli::run(args, std::cout, std::cerr);
}
