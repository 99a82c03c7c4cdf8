#include "geodistill/harness/cli.hpp"

int main(int argc, char** argv) { return geodistill::harness::run_cli(argc, argv); }
