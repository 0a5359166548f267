#include "rank1sense/cli.hpp"

int main(int argc, char** argv) { return rank1sense::cli::run_cli(argc, argv); }
