#include "hotcalib/cli.hpp"

int main(int argc, char** argv) { return hotcalib::cli::run(argc, argv); }
