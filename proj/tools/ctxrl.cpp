// Copyright 2026 The ctxrl Authors
// SPDX-License-Identifier: Apache-2.0

#include "ctxrl/cli.hpp"

int main(int argc, char** argv) { return ctxrl::cli::run(argc, argv); }
