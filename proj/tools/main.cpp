#include "ssnn/cli.hpp"

int main(int argc, char** argv) { return ssnn::run_cli(argc, argv); }
