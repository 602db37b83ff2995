#include <iostream>

#include "dcem/cli.hpp"

int main(int argc, char** argv) {
  return dcem::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
