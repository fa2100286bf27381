#include "vldp/cli.hpp"

int main(int argc, char** argv) { return vldp::cli::run(argc, argv); }
