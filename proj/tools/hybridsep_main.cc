#include <iostream>
#include <string>
#include <vector>

#include "hybridsep/cli.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return hybridsep::cli::run_cli(args, std::cout, std::cerr);
}
