#include "freeflow/cli.hpp"

int main(int argc, char** argv) { return freeflow::run_command(argc, argv); }
