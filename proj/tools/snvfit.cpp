#include <string>
#include <vector>

#include "snv/cli.hpp"

int main(int argc, char** argv) {
  return snv::cli::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
