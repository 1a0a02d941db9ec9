#include "triplet/cli.hpp"

int main(int argc, char** argv) { return triplet::cli::dispatch(argc, argv); }
