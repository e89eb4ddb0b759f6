// Command-line entry point. Subcommands are wired up in cli.hpp.
#include <cstdio>

int main(int argc, char** argv) {
  (void)argc;
  (void)argv;
  std::puts("grdo: CLI not yet implemented");
  return 2;
}
