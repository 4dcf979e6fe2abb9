#include <string>
#include <vector>

#include "faithscope/cli.hpp"

int main(int argc, char** argv) { return faithscope::run_command(std::vector<std::string>(argv, argv + argc)); }
