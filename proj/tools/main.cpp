#include "difftune/cli.hpp"

int main(int argc, char** argv) { return difftune::cli_dispatch(argc, argv); }
