#include "diffeo/cli.hpp"

int main(int argc, char** argv) { return diffeo::cli::main(argc, argv); }
