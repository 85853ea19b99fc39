#include "moca/harness/cli.hpp"

int main(int argc, char** argv) { return moca::harness::run_cli(argc, argv); }
