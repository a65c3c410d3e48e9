#include "rockseg/cli/driver.hpp"

int main(int argc, char** argv) { return rockseg::cli::run(argc, argv); }
