#include <string>
#include <vector>

#include "cs2/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cs2::cli::run(std::move(args));
}
