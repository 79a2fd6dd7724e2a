#include "guq/cli.hpp"

int main(int argc, char** argv) { return guq::cli::dispatch(argc, argv); }
