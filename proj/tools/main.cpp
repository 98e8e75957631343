#include <vector>

#include "pollsim/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return pollsim::cli::dispatch(args);
}
