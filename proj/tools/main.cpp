#include <string>
#include <vector>

#include "resinit/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return resinit::run_cli(args);
}
