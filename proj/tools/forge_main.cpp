#include <iostream>

#include "forge/harness.hpp"

int main(int argc, char** argv) {
  return forge::run_cli(argc, argv, std::cout, std::cerr);
}
