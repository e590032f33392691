#include "trajrec/cli.hpp"

int main(int argc, char** argv) { return trajrec::run_cli(argc, argv); }
