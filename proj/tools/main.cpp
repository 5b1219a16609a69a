#include "lrco/cli.hpp"

int main(int argc, char** argv) { return lrco::cli::run(argc, argv); }
