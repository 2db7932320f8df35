#include "noteassign/cli.hpp"

int main(int argc, char** argv) { return noteassign::run_cli(argc, argv); }
