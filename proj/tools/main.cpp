#include "hsinpaint/cli.hpp"

int main(int argc, char** argv) { return hsi::run_cli(argc, argv); }
