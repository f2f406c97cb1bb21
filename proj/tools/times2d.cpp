#include "times2d/cli.hpp"

int main(int argc, char** argv) { return times2d::run_cli(argc, argv); }
