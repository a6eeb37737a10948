#include "ragcap/cli.hpp"

int main(int argc, char** argv) { return ragcap::cli::run(argc, argv); }
