#include "dsr/cli.hpp"

int main(int argc, char** argv) { return dsr::run_cli(argc, argv); }
