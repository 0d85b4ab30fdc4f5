#include "densforge/cli.hpp"

int main(int argc, char** argv) { return densforge::run_cli(argc, argv); }
