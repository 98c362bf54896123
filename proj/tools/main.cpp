#include "polygraph/cli.hpp"

int main(int argc, char** argv) { return polygraph::cli::run(argc, argv); }
