#include "treeproj/run_config.hpp"

int main(int argc, char** argv) { return treeproj::run_cli(argc, argv); }
