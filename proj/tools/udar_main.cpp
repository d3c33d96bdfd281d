#include "udar/cli.hpp"

int main(int argc, char** argv) { return udar::cli::run(argc, argv); }
