// Copyright (c) 2026 The EAR Attention Authors.
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <string>
#include <vector>

#include "ear/harness.hpp"

int main(int argc, char** argv) {
  std::ios::sync_with_stdio(false);
  return ear::harness_main(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
