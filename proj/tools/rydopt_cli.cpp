#include "rydopt/cli.hpp"

int main(int argc, char** argv) { return rydopt::cli::run(argc, argv); }
