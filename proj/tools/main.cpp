#include "fcdd/cli.hpp"

int main(int argc, char** argv) { return fcdd::cli_main(argc, argv); }
