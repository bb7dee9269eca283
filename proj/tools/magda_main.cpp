// SPDX-License-Identifier: Apache-2.0
#include "magda/cli.hpp"

#include <iostream>

int main(int argc, char** argv)
{
    return magda::cli::main(argc, argv, std::cout, std::cerr);
}
