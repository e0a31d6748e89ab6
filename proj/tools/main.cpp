#include <string>
#include <vector>

#include "rft/cli.hpp"

int main(int argc, char** argv) { return rft::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
