#include "dppflow/cli.hpp"

int main(int argc, char** argv) { return dppflow::cli::run_cli(argc, argv); }
