#include "ctsn/cli.hpp"

int main(int argc, char** argv) { return ctsn::cli::run(argc, argv); }
