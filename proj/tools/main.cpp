#include "clab/cli.hpp"

int main(int argc, char **argv) { return clab::cli::run(std::vector<std::string>(argv + 1, argv + argc)); }
