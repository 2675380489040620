#include "fedlora/cli.hpp"

int main(int argc, char** argv) { return fedlora::cli::run(argc, argv); }
