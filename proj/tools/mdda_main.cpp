#include "mdda/cli.hpp"

int main(int argc, char** argv) {
    return mdda::cmd_dispatch(argc, argv);
}
