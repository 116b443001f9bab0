// SPDX-License-Identifier: Apache-2.0
#include "flywheel/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return flywheel::run_cli(args);
}
