// SPDX-License-Identifier: Apache-2.0
#include "hsakd/cli.hpp"

int main(int argc, char** argv) { return hsakd::cli_main(argc, argv); }
