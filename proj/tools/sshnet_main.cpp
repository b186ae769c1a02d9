// Copyright (c) 2026 The sshnet Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "sshnet/cli.hpp"

int main(int argc, char** argv) { return sshnet::run_cli(argc, argv, std::cout, std::cerr); }
