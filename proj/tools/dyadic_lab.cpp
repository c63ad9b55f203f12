#include "dyadic/cli.hpp"

int main(int argc, char** argv) { return dyadic::cli::run(argc, argv); }
