// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return ta2n::cli::run({argv, argv + argc}, std::cout, std::cerr); }
