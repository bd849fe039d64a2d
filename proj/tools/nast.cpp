#include "nast/cli.hpp"

int main(int argc, char** argv) { return nast::run_command(argc, argv); }
