#include <iostream>

#include "socsum/cli.h"

int main(int argc, char** argv) {
  return socsum::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
