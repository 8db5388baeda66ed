#include "fitprune/cli.hpp"

int main(int argc, char** argv) {
    return fitprune::cli::run(argc, argv);
}
