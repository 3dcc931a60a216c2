#include "rbfusion/cli.hpp"

int main(int argc, char** argv) { return rbfusion::cli::run(argc, argv); }
