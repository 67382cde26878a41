#include "cli.hpp"

int main(int argc, char** argv) { return medrag::cli::run_cli(argc, argv); }
