#include "multiwave/cli.hpp"

int main(int argc, char** argv) { return multiwave::run_cli(argc, argv); }
