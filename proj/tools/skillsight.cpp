#include <string>
#include <vector>

#include "skillsight/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return skillsight::run_cli(args);
}
