#include <iostream>
#include <vector>

#include "thermoformer/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return thermoformer::run_cli(args, std::cout, std::cerr);
}
