#include "fnt/harness/cli.hpp"

int main(int argc, char** argv) { return fnt::RunCli(argc, argv); }
