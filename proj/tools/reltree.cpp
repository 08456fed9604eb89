#include <iostream>
#include <string>
#include <vector>

#include "reltree/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return reltree::run_cli(args, std::cout, std::cerr);
}
