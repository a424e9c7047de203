#include <iostream>
#include <string>
#include <vector>

#include "dermnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dermnet::cli_dispatch(args, std::cout, std::cerr);
}
