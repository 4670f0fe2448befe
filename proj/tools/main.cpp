#include "atriamap/cli.hpp"

int main(int argc, char** argv) { return atriamap::cli::run(argc, argv); }
