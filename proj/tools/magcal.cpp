#include <iostream>
#include <string>
#include <vector>

#include "magcal/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return magcal::run_cli(args, std::cout, std::cerr);
}
