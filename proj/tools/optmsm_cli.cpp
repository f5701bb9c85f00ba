// SPDX-License-Identifier: Apache-2.0
#include "optmsm/cli.hpp"

int main(int argc, char** argv) { return optmsm::cli::run(argc, argv); }
