#include <string>
#include <vector>

#include "mmnas/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return mmnas::run_cli(args);
}
