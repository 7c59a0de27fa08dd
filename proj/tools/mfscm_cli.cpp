#include "mfscm/cli.hpp"

int main(int argc, char** argv) { return mfscm::cli::run(argc, argv); }
