#include "dsat/cli.hpp"

int main(int argc, char** argv) { return dsat::cli::run(argc, argv); }
