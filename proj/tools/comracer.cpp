#include <iostream>

#include "comracer/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return comracer::run_cli(args, std::cout, std::cerr);
}
