#pragma once

namespace densforge {

// Entry point of the densforge tool. Returns 0 on success, 1 on a usage error
// (help printed to standard error) and 2 when a command fails at runtime.
int run_cli(int argc, char** argv);

}  // namespace densforge
