#include <string>
#include <vector>

#include "nambert/cli.hpp"

int main(int argc, char** argv) { return nambert::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
