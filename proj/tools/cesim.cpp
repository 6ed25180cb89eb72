#include <cesim/cli.hpp>

int main(int argc, char** argv) { return cesim::cli::main(argc, argv); }
