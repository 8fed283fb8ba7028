#include "volnet/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    try {
        return volnet::cli::run({argv + 1, argv + argc}, {std::cout, std::cerr});
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
