#include "dadsim/cli.hpp"

int main(int argc, char** argv) { return dadsim::cli::dispatch(argc, argv); }
