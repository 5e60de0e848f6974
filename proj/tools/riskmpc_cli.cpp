#include <iostream>

#include "riskmpc/commands.hpp"

int main(int argc, char** argv) {
  return riskmpc::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
