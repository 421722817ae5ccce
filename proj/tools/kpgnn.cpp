#include <iostream>

#include "kpgnn/cli.hpp"

int main(int argc, char** argv) {
  return kpgnn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
