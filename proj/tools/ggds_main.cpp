#include "ggds/cli.hpp"

int main(int argc, char **argv) { return ggds::cli_main(argc, argv); }
