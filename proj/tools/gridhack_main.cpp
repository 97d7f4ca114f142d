// Placeholder entry point; subcommands are wired up in src/cli.
#include <cstdio>

int main() {
    std::puts("gridhack: cli not wired yet");
    return 1;
}
