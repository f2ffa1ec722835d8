#include "metadepth/cli.hpp"

int main(int argc, char** argv) { return metadepth::cli_main(argc, argv); }
