#include "lro/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return lro::run_cli(argc, argv, std::cout, std::cerr);
}
